//! Wilcoxon signed-rank test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::metrics::midranks;
use super::{Result, TrainError};

/// Largest sample size using the exact null distribution.
pub const EXACT_MAX_N: usize = 12;
/// Smallest sample size accepted after zero differences are dropped.
pub const MIN_N: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences `a - b`.
    pub w_plus: f64,
    /// Pairs kept after dropping zero differences.
    pub n: usize,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: Method,
}

/// Two-sided test of `a - b` symmetric about zero. Zero differences are
/// dropped; tied magnitudes share midranks.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(TrainError::Contract(format!("unpaired samples: {} vs {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(TrainError::Domain("non-finite difference".into()));
    }
    if diffs.is_empty() {
        return Err(TrainError::Degenerate("all paired differences are zero".into()));
    }
    let n = diffs.len();
    if n < MIN_N {
        return Err(TrainError::Domain(format!("{n} nonzero differences; at least {MIN_N} required")));
    }
    let ranks = midranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    if n <= EXACT_MAX_N {
        let p_value = exact_p(&ranks, w_plus);
        return Ok(WilcoxonResult { w_plus, n, p_value, method: Method::Exact });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let z = (w_plus - mean) / var.sqrt();
    let std = Normal::standard();
    let p_value = (2.0 * std.sf(z.abs())).min(1.0);
    Ok(WilcoxonResult { w_plus, n, p_value, method: Method::Normal })
}

/// Two-sided exact p from the sign-flip distribution of the given ranks.
/// Midranks are multiples of 1/2, so doubled ranks index an integer table.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let total = (1u64 << ranks.len()) as f64;
    let w = (2.0 * w_plus).round() as usize;
    let lower: u64 = counts[..=w].iter().sum();
    let upper: u64 = counts[w..].iter().sum();
    (2.0 * lower.min(upper) as f64 / total).min(1.0)
}
