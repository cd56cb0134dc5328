#![allow(dead_code)]

use pocketnet::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in [-1, 1], kept at least 1e-3 away from zero so relu
/// kinks are not straddled by the finite-difference step.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    let values = (0..len)
        .map(|_| {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() < 1e-3 { v.signum() * 1e-3 + v } else { v }
        })
        .collect();
    Tensor::from_vec(shape, values).unwrap()
}

pub fn positive_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap()
}

/// Central-difference check of every input gradient of a scalar function.
/// Returns the worst norm-wise relative error `|a - n| / max(|a|, |n|)` over
/// the inputs, where `a` is the tape gradient and `n` the numerical one.
pub fn max_relative_error<F>(inputs: &[Tensor<f64>], build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Var,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            tape.grad(*v)
                .map(|g| g.values().to_vec())
                .unwrap_or_else(|| vec![0.0; t.len()])
        })
        .collect();

    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.len()];
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].values_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].values_mut()[j] -= FD_STEP;
            numeric[j] = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic[i].iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic[i].iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let scale = na.max(nn);
        let rel = if scale < 1e-12 { diff } else { diff / scale };
        worst = worst.max(rel);
    }
    worst
}

/// Random probe weights that reduce a tensor to a scalar.
pub fn probe(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// A named gradient case over random shapes.
pub struct GradCase {
    pub name: String,
    pub error: f64,
}

/// The gradient suite shared by the integration and acceptance tests: every
/// differentiable op on several random shapes.
pub fn gradient_suite(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut cases = Vec::new();
    let mut record = |name: String, error: f64| cases.push(GradCase { name, error });

    for _ in 0..3 {
        let (b, cin, cout) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
        let k = [1, 3, 5][r.random_range(0..3)];
        let (h, w) = (r.random_range(k..k + 4), r.random_range(k..k + 4));
        let x = random_tensor(&mut r, &[b, cin, h, w]);
        let wt = random_tensor(&mut r, &[cout, cin, k, k]);
        let bias = random_tensor(&mut r, &[cout]);
        let p = probe(&mut r, b * cout * h * w);
        let err = max_relative_error(&[x, wt, bias], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2])).unwrap();
            t.weighted_sum(y, p.clone()).unwrap()
        });
        record(format!("conv2d {b}x{cin}x{h}x{w} k={k} -> {cout}"), err);
    }
    {
        // The reference shape: 2x3x8x8.
        let x = random_tensor(&mut r, &[2, 3, 8, 8]);
        let wt = random_tensor(&mut r, &[4, 3, 3, 3]);
        let bias = random_tensor(&mut r, &[4]);
        let p = probe(&mut r, 2 * 4 * 64);
        let err = max_relative_error(&[x, wt, bias], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2])).unwrap();
            t.weighted_sum(y, p.clone()).unwrap()
        });
        record("conv2d 2x3x8x8 k=3 -> 4".into(), err);
    }
    for _ in 0..2 {
        let (b, cin, cout) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
        let (h, w) = (r.random_range(1..4), r.random_range(1..4));
        let x = random_tensor(&mut r, &[b, cin, h, w]);
        let wt = random_tensor(&mut r, &[cin, cout, 2, 2]);
        let bias = random_tensor(&mut r, &[cout]);
        let p = probe(&mut r, b * cout * 4 * h * w);
        let err = max_relative_error(&[x, wt, bias], |t, v| {
            let y = t.conv_transpose2(v[0], v[1], Some(v[2])).unwrap();
            t.weighted_sum(y, p.clone()).unwrap()
        });
        record(format!("conv_transpose2 {b}x{cin}x{h}x{w} -> {cout}"), err);
    }
    for _ in 0..2 {
        let shape = [r.random_range(1..3), r.random_range(1..3), 2 * r.random_range(1..4), 2 * r.random_range(1..4)];
        let x = random_tensor(&mut r, &shape);
        let p = probe(&mut r, x.len() / 4);
        let err = max_relative_error(&[x], |t, v| {
            let y = t.maxpool2(v[0]).unwrap();
            t.weighted_sum(y, p.clone()).unwrap()
        });
        record(format!("maxpool2 {shape:?}"), err);
    }
    for _ in 0..2 {
        let shape = [r.random_range(1..3), r.random_range(1..4), r.random_range(1..5), r.random_range(1..5)];
        let x = random_tensor(&mut r, &shape);
        let p = probe(&mut r, shape[0] * shape[1]);
        let err = max_relative_error(&[x], |t, v| {
            let y = t.global_maxpool(v[0]).unwrap();
            t.weighted_sum(y, p.clone()).unwrap()
        });
        record(format!("global_maxpool {shape:?}"), err);
    }
    for name in ["relu", "sigmoid"] {
        for _ in 0..2 {
            let shape = [r.random_range(1..3), r.random_range(1..4), r.random_range(1..5)];
            let x = random_tensor(&mut r, &shape);
            let p = probe(&mut r, x.len());
            let err = max_relative_error(&[x], |t, v| {
                let y = if name == "relu" { t.relu(v[0]) } else { t.sigmoid(v[0]) };
                t.weighted_sum(y, p.clone()).unwrap()
            });
            record(format!("{name} {shape:?}"), err);
        }
    }
    for shape in [vec![3, 4], vec![2, 3, 2, 2]] {
        let x = random_tensor(&mut r, &shape);
        let p = probe(&mut r, x.len());
        let err = max_relative_error(&[x], |t, v| {
            let y = t.softmax(v[0]).unwrap();
            t.weighted_sum(y, p.clone()).unwrap()
        });
        record(format!("softmax {shape:?}"), err);
    }
    {
        let shape = [2, 3, 2, 3];
        let (a, b) = (random_tensor(&mut r, &shape), random_tensor(&mut r, &shape));
        let p = probe(&mut r, a.len());
        let err = max_relative_error(&[a, b], |t, v| {
            let y = t.add(v[0], v[1]).unwrap();
            t.weighted_sum(y, p.clone()).unwrap()
        });
        record(format!("add {shape:?}"), err);
    }
    {
        let a = random_tensor(&mut r, &[2, 1, 3, 2]);
        let b = random_tensor(&mut r, &[2, 3, 3, 2]);
        let c = random_tensor(&mut r, &[2, 2, 3, 2]);
        let p = probe(&mut r, 2 * 6 * 6);
        let err = max_relative_error(&[a, b, c], |t, v| {
            let y = t.concat(&[v[0], v[1], v[2]]).unwrap();
            t.weighted_sum(y, p.clone()).unwrap()
        });
        record("concat [1,3,2] channels".into(), err);
    }
    for _ in 0..2 {
        let (b, din, dout) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..5));
        let x = random_tensor(&mut r, &[b, din]);
        let wt = random_tensor(&mut r, &[dout, din]);
        let bias = random_tensor(&mut r, &[dout]);
        let p = probe(&mut r, b * dout);
        let err = max_relative_error(&[x, wt, bias], |t, v| {
            let y = t.dense(v[0], v[1], Some(v[2])).unwrap();
            t.weighted_sum(y, p.clone()).unwrap()
        });
        record(format!("dense {b}x{din} -> {dout}"), err);
    }
    for _ in 0..2 {
        let shape = [r.random_range(1..3), 1, r.random_range(2..5), r.random_range(2..5)];
        let truth = positive_tensor(&mut r, &shape);
        let pred = positive_tensor(&mut r, &shape);
        let err = max_relative_error(&[truth, pred], |t, v| t.dice_l2_loss(v[0], v[1]).unwrap());
        record(format!("dice_l2_loss {shape:?}"), err);
    }
    for _ in 0..2 {
        let (b, c) = (r.random_range(1..5), r.random_range(2..5));
        let logits = random_tensor(&mut r, &[b, c]);
        let mut labels = vec![0.0; b * c];
        for row in 0..b {
            labels[row * c + r.random_range(0..c)] = 1.0;
        }
        let labels = Tensor::from_vec(&[b, c], labels).unwrap();
        let err = max_relative_error(&[logits], |t, v| {
            let probs = t.softmax(v[0]).unwrap();
            let l = t.constant(labels.clone());
            t.cross_entropy(l, probs).unwrap()
        });
        record(format!("cross_entropy(softmax) {b}x{c}"), err);
    }
    {
        // Small network mixing every block-level op, including fan-out.
        let x = random_tensor(&mut r, &[1, 2, 6, 6]);
        let w1 = random_tensor(&mut r, &[3, 2, 3, 3]);
        let w2 = random_tensor(&mut r, &[3, 3, 3, 3]);
        let wu = random_tensor(&mut r, &[3, 3, 2, 2]);
        let err = max_relative_error(&[x, w1, w2, wu], |t, v| {
            let a = t.conv2d(v[0], v[1], None).unwrap();
            let a = t.relu(a);
            let d = t.maxpool2(a).unwrap();
            let c = t.conv2d(d, v[2], None).unwrap();
            let u = t.conv_transpose2(c, v[3], None).unwrap();
            let m = t.add(a, u).unwrap();
            let s = t.sigmoid(m);
            let truth = t.constant(Tensor::full(&[1, 3, 6, 6], 0.5));
            t.dice_l2_loss(truth, s).unwrap()
        });
        record("composite down/up block".into(), err);
    }
    cases
}

/// `P(s+ > s-) + P(tie)/2` by counting every positive/negative pair.
pub fn pairwise_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1 && lj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Two-sided p from enumerating all `2^n` sign assignments of the ranks.
pub fn brute_force_wilcoxon(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let ranks: Vec<f64> = abs
        .iter()
        .map(|a| {
            let below = abs.iter().filter(|b| *b < a).count() as f64;
            let equal = abs.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect();
    let observed: f64 = ranks.iter().zip(&d).filter(|(_, x)| **x > 0.0).map(|(r, _)| r).sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        le += u64::from(w <= observed + 1e-9);
        ge += u64::from(w >= observed - 1e-9);
    }
    (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
}
