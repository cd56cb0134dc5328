//! Adam with bias correction.

use super::{Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter tensor plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One Adam update of every tensor in `params`.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TensorError::Shape(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(TensorError::Shape(format!(
                "adam: parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    // Fold the bias corrections into the step size and epsilon.
    let step = T::lit(lr * c2.sqrt() / c1);
    let eps = T::lit(cfg.eps * c2.sqrt());
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].values_mut();
        let v = state.v[i].values_mut();
        for (((pi, &gi), mi), vi) in p.values_mut().iter_mut().zip(g.values()).zip(m).zip(v) {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            *pi -= step * *mi / (vi.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut params = vec![Tensor::<f64>::from_vec(&[2], vec![1.0, -2.0]).unwrap()];
        let mut state = AdamState::new(&params, AdamConfig::default());
        state.m[0].values_mut().copy_from_slice(&[0.5, 0.5]);
        state.v[0].values_mut().copy_from_slice(&[0.25, 0.25]);
        let zero = vec![Tensor::zeros(&[2])];
        // Moments are nonzero so the params still move; check decay only.
        adam_step(&mut params, &zero, &mut state, 0.0).unwrap();
        assert_eq!(params[0].values(), &[1.0, -2.0]);
        assert!((state.m[0].values()[0] - 0.45).abs() < 1e-15);
        assert!((state.v[0].values()[0] - 0.25 * 0.999).abs() < 1e-15);

        let mut fresh = vec![Tensor::<f64>::from_vec(&[2], vec![1.0, -2.0]).unwrap()];
        let mut s = AdamState::new(&fresh, AdamConfig::default());
        adam_step(&mut fresh, &zero, &mut s, 0.1).unwrap();
        assert_eq!(fresh[0].values(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut params = vec![Tensor::<f64>::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap()];
        let mut state = AdamState::new(&params, AdamConfig::default());
        let g = vec![Tensor::from_vec(&[3], vec![3.0, -0.01, 250.0]).unwrap()];
        adam_step(&mut params, &g, &mut state, 0.001).unwrap();
        for (p, s) in params[0].values().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((p - 0.001 * s).abs() < 1e-8, "{p}");
        }
    }

    /// Plain textbook Adam on a scalar, used as the reference trajectory.
    fn reference_adam(x0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        x
    }

    #[test]
    fn minimises_a_parabola() {
        let mut params = vec![Tensor::<f64>::scalar(1.0)];
        let mut state = AdamState::new(&params, AdamConfig::default());
        for _ in 0..200 {
            let g = vec![Tensor::scalar(2.0 * params[0].item())];
            adam_step(&mut params, &g, &mut state, 0.1).unwrap();
        }
        let x = params[0].item();
        assert!(x.abs() < 1e-2, "x = {x}");
        let reference = reference_adam(1.0, 0.1, 200);
        assert!(reference.abs() < 1e-2);
        assert!((x - reference).abs() < 1e-6, "{x} vs {reference}");
    }

    #[test]
    fn mismatched_shapes_error() {
        let mut params = vec![Tensor::<f32>::zeros(&[2])];
        let mut state = AdamState::new(&params, AdamConfig::default());
        let g = vec![Tensor::zeros(&[3])];
        assert!(adam_step(&mut params, &g, &mut state, 0.1).is_err());
    }
}
