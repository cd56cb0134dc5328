//! Evaluation metrics.

use super::{Result, TrainError};

/// `2|A∩B| / (|A| + |B|)` on binary masks.
pub fn dice_coefficient(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(TrainError::Contract(format!("mask lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|&v| v != 0.0 && v != 1.0) {
        return Err(TrainError::Contract("masks must be binary".into()));
    }
    let (mut inter, mut size) = (0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        inter += u64::from(x == 1.0 && y == 1.0);
        size += u64::from(x == 1.0) + u64::from(y == 1.0);
    }
    if size == 0 {
        return Err(TrainError::Domain("dice undefined for two empty masks".into()));
    }
    Ok(2.0 * inter as f64 / size as f64)
}

/// Thresholds probabilities at 0.5.
pub fn binarize(probs: &[f32]) -> Vec<f32> {
    probs.iter().map(|&p| if p >= 0.5 { 1.0 } else { 0.0 }).collect()
}

/// Area under the ROC curve as `P(s+ > s-) + P(s+ = s-)/2`, from midranks.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(TrainError::Contract(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(TrainError::Domain("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.iter().filter(|&&l| l == 0).count();
    if pos + neg != labels.len() {
        return Err(TrainError::Contract("labels must be 0 or 1".into()));
    }
    if pos == 0 || neg == 0 {
        return Err(TrainError::Domain("auc needs both classes".into()));
    }
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mean and sample standard deviation (`n - 1` denominator; 0 for n = 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
