//! Glorot (Xavier) uniform initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scalar, Tensor};

/// `(fan_in, fan_out)` for a weight shape: `(out, in)` for dense layers,
/// `(out, in, k...)` for convolutions, scaled by the receptive field.
pub fn fans(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (*n, *n),
        [out, inp] => (*inp, *out),
        [out, inp, rest @ ..] => {
            let receptive: usize = rest.iter().product();
            (inp * receptive, out * receptive)
        }
    }
}

pub fn glorot_limit(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = fans(shape);
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}

/// Uniform on `±sqrt(6 / (fan_in + fan_out))`, deterministic per seed.
pub fn glorot_init<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    glorot_init_stream(shape, seed, 0)
}

/// As [`glorot_init`] with an independent ChaCha stream per `stream` id.
pub fn glorot_init_stream<T: Scalar>(shape: &[usize], seed: u64, stream: u64) -> Tensor<T> {
    let limit = glorot_limit(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let len = shape.iter().product();
    let values = (0..len)
        .map(|_| T::lit(rng.random_range(-limit..limit)))
        .collect();
    Tensor::from_vec(shape, values).expect("length matches shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = glorot_init::<f32>(&[16, 8, 3, 3], 11);
        let b = glorot_init::<f32>(&[16, 8, 3, 3], 11);
        let c = glorot_init::<f32>(&[16, 8, 3, 3], 12);
        assert_eq!(
            a.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a, c);
        assert_ne!(glorot_init_stream::<f32>(&[4, 4], 1, 0), glorot_init_stream::<f32>(&[4, 4], 1, 1));
    }

    #[test]
    fn samples_respect_bound_and_variance() {
        let shape = [500, 200];
        let t = glorot_init::<f64>(&shape, 3);
        let limit = glorot_limit(&shape);
        assert_eq!(t.len(), 100_000);
        assert!(t.values().iter().all(|v| v.abs() <= limit));
        let n = t.len() as f64;
        let mean = t.values().iter().sum::<f64>() / n;
        let var = t.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // Uniform(-l, l) has variance l^2 / 3 = 2 / (fan_in + fan_out).
        let expected = 2.0 / 700.0;
        assert!((var - expected).abs() / expected < 0.10, "var {var} vs {expected}");
    }

    #[test]
    fn fan_conventions() {
        assert_eq!(fans(&[32, 16, 3, 3]), (144, 288));
        assert_eq!(fans(&[10, 4]), (4, 10));
    }
}
