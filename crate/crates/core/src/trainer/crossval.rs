//! Paired full/pocket comparisons.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::archgraph::{build_graph, ArchSpec, Head};
use crate::costmodel::count_params;
use crate::data::{kfold_split, Dataset};

use super::metrics::{auc, mean_std};
use super::stats::{wilcoxon_signed_rank, WilcoxonResult};
use super::{evaluate, seeded, train, Result, TrainConfig, TrainError};

/// Largest accepted gap between the two variants' mean metrics on the
/// synthetic baseline.
pub const COMPARABILITY_TOLERANCE: f64 = 0.05;

const SUBSET_STREAM: u64 = (1 << 32) + 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub excluded: usize,
    pub epochs_run: usize,
    pub final_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: String,
    pub params: u64,
    pub folds: Vec<FoldResult>,
    /// Per-sample metric over all test folds, ordered by dataset index.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub excluded: usize,
    /// Pooled AUC over all test folds (classification only).
    pub auc: Option<f64>,
}

impl VariantSummary {
    /// Dice mean for segmentation, AUC for classification.
    pub fn headline(&self) -> f64 {
        self.auc.unwrap_or(self.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValReport {
    pub task: String,
    pub architecture: String,
    pub k: usize,
    pub a: VariantSummary,
    pub b: VariantSummary,
    pub wilcoxon: Option<WilcoxonResult>,
    /// Why no test statistic is reported, when none is.
    pub wilcoxon_note: Option<String>,
}

impl CrossValReport {
    pub fn param_ratio(&self) -> f64 {
        self.a.params as f64 / self.b.params as f64
    }

    pub fn mean_gap(&self) -> f64 {
        (self.a.headline() - self.b.headline()).abs()
    }

    pub const CSV_HEADER: &'static str = "task,architecture,variant,params,accuracy,std,p";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for (v, p) in [(&self.a, None), (&self.b, self.wilcoxon.map(|w| w.p_value))] {
            let std = if v.auc.is_some() { String::new() } else { format!("{:.6}", v.std) };
            let p = p.map(|p| format!("{p:.6e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{},{}",
                self.task, self.architecture, v.variant, v.params, v.headline(), std, p
            );
        }
        out
    }

    /// Aligned text table with a footer on the comparison rule.
    pub fn to_table(&self) -> String {
        let metric = if self.a.auc.is_some() { "AUC" } else { "Dice" };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:<12} {:<8} {:>12} {:>9} {:>8} {:>10}",
            "Task", "Architecture", "Variant", "#Parameters", metric, "std", "p"
        );
        for (v, p) in [(&self.a, None), (&self.b, self.wilcoxon.map(|w| w.p_value))] {
            let std = if v.auc.is_some() { "-".to_string() } else { format!("{:.4}", v.std) };
            let p = p.map(|p| format!("{p:.3e}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<14} {:<12} {:<8} {:>12} {:>9.4} {:>8} {:>10}",
                self.task, self.architecture, v.variant, v.params, v.headline(), std, p
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{}-fold cross-validation; per-sample pairing over {} test samples ({} / {} undefined excluded).",
            self.k,
            self.a.values.len(),
            self.a.excluded,
            self.b.excluded
        );
        let _ = writeln!(out, "Parameter ratio {}/{}: {:.2}", self.a.variant, self.b.variant, self.param_ratio());
        match (&self.wilcoxon, &self.wilcoxon_note) {
            (Some(w), _) => {
                let _ = writeln!(out, "Wilcoxon signed-rank: W+ = {}, n = {}, {:?} p = {:.4e}", w.w_plus, w.n, w.method, w.p_value);
            }
            (None, Some(note)) => {
                let _ = writeln!(out, "Wilcoxon signed-rank: {note}");
            }
            (None, None) => {}
        }
        let _ = writeln!(
            out,
            "Comparability rule: |mean difference| <= {COMPARABILITY_TOLERANCE}; small synthetic sets vary more than \
             large clinical ones. Observed {:.4}.",
            self.mean_gap()
        );
        out
    }
}

fn variant_name(spec: &ArchSpec) -> &'static str {
    if spec.pocket {
        "pocket"
    } else {
        "full"
    }
}

/// Full versus pocket variant of `spec` on identical folds and seeds.
pub fn cross_validate(spec: &ArchSpec, dataset: &Dataset, k: usize, config: &TrainConfig) -> Result<CrossValReport> {
    cross_validate_pair(&spec.with_pocket(false), &spec.with_pocket(true), dataset, k, config)
}

/// Two arbitrary specs on identical folds, seeds and batch orders.
pub fn cross_validate_pair(
    spec_a: &ArchSpec,
    spec_b: &ArchSpec,
    dataset: &Dataset,
    k: usize,
    config: &TrainConfig,
) -> Result<CrossValReport> {
    config.validate()?;
    let folds = kfold_split(dataset.len(), k, config.seed)?;
    let mut summaries = Vec::new();
    for spec in [spec_a, spec_b] {
        let graph = build_graph(spec).map_err(|e| TrainError::Contract(e.to_string()))?;
        let params = count_params(&graph).map_err(|e| TrainError::Contract(e.to_string()))?.total_params;
        let mut fold_results = Vec::new();
        let mut pooled: Vec<(usize, f64)> = Vec::new();
        let (mut scores, mut labels) = (Vec::new(), Vec::new());
        let mut excluded = 0;
        for (f, test) in folds.iter().enumerate() {
            let fit: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect();
            let fold_config = TrainConfig { seed: config.seed.wrapping_add(f as u64), ..config.clone() };
            let outcome = train(&graph, &dataset.subset(&fit), &fold_config)?;
            let eval = evaluate(&outcome.model, dataset, test, &fold_config)?;
            let (mean, std) = mean_std(&eval.values);
            pooled.extend(eval.indices.iter().copied().zip(eval.values.iter().copied()));
            scores.extend_from_slice(&eval.scores);
            labels.extend_from_slice(&eval.labels);
            excluded += eval.excluded;
            fold_results.push(FoldResult {
                fold: f,
                indices: eval.indices,
                values: eval.values,
                mean,
                std,
                excluded: eval.excluded,
                epochs_run: outcome.epochs_run,
                final_lr: outcome.final_lr,
            });
        }
        pooled.sort_by_key(|(i, _)| *i);
        let (indices, values): (Vec<usize>, Vec<f64>) = pooled.into_iter().unzip();
        let (mean, std) = mean_std(&values);
        let auc = match spec.head {
            Head::Classification => Some(auc(&labels, &scores)?),
            Head::Segmentation => None,
        };
        summaries.push(VariantSummary {
            variant: variant_name(spec).into(),
            params,
            folds: fold_results,
            indices,
            values,
            mean,
            std,
            excluded,
            auc,
        });
    }
    let b = summaries.pop().expect("two variants");
    let a = summaries.pop().expect("two variants");

    let (wilcoxon, wilcoxon_note) = if spec_a.head == Head::Classification {
        (None, Some("not reported for classification; compare AUC only".to_string()))
    } else {
        let (pa, pb) = paired(&a, &b);
        match wilcoxon_signed_rank(&pa, &pb) {
            Ok(w) => (Some(w), None),
            Err(TrainError::Degenerate(msg)) | Err(TrainError::Domain(msg)) => (None, Some(format!("not computed ({msg})"))),
            Err(e) => return Err(e),
        }
    };
    Ok(CrossValReport {
        task: spec_a.head.name().into(),
        architecture: spec_a.block_kind.name().into(),
        k,
        a,
        b,
        wilcoxon,
        wilcoxon_note,
    })
}

/// Values of samples defined in both summaries, matched by index.
fn paired(a: &VariantSummary, b: &VariantSummary) -> (Vec<f64>, Vec<f64>) {
    let mut out = (Vec::new(), Vec::new());
    let (mut i, mut j) = (0, 0);
    while i < a.indices.len() && j < b.indices.len() {
        match a.indices[i].cmp(&b.indices[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.0.push(a.values[i]);
                out.1.push(b.values[j]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationPoint {
    pub fraction: f64,
    pub train_count: usize,
    pub full: f64,
    pub pocket: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaturationReport {
    pub metric: String,
    pub points: Vec<SaturationPoint>,
    /// Training indices used at each fraction.
    pub subsets: Vec<Vec<usize>>,
}

impl SaturationReport {
    pub const CSV_HEADER: &'static str = "fraction,train_count,full_metric,pocket_metric";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for p in &self.points {
            let _ = writeln!(out, "{},{},{:.6},{:.6}", p.fraction, p.train_count, p.full, p.pocket);
        }
        out
    }
}

/// Nested training subsets: the leading `round(f * n)` entries of one seeded
/// permutation, each kept in dataset order.
pub fn nested_subsets(n: usize, fractions: &[f64], seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed, SUBSET_STREAM));
    fractions
        .iter()
        .map(|f| {
            let m = ((n as f64 * f).round() as usize).min(n);
            let mut s = order[..m].to_vec();
            s.sort_unstable();
            s
        })
        .collect()
}

/// Trains both variants of `spec` on growing nested subsets of `train_set`
/// and scores each on `test_set`.
pub fn saturation_sweep(
    spec: &ArchSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    fractions: &[f64],
    config: &TrainConfig,
) -> Result<SaturationReport> {
    config.validate()?;
    if fractions.is_empty() {
        return Err(TrainError::Argument("no fractions given".into()));
    }
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) || fractions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TrainError::Argument(format!("fractions {fractions:?} must be increasing within (0, 1]")));
    }
    let subsets = nested_subsets(train_set.len(), fractions, config.seed);
    for (f, s) in fractions.iter().zip(&subsets) {
        if s.len() < config.batch_size {
            return Err(TrainError::Argument(format!(
                "fraction {f} gives {} samples, fewer than one batch of {}",
                s.len(),
                config.batch_size
            )));
        }
    }
    let test_idx: Vec<usize> = (0..test_set.len()).collect();
    let graphs = [false, true].map(|pocket| build_graph(&spec.with_pocket(pocket)));
    let mut points = Vec::new();
    for (f, s) in fractions.iter().zip(&subsets) {
        let mut metric = [0.0; 2];
        for (slot, graph) in graphs.iter().enumerate() {
            let graph = graph.as_ref().map_err(|e| TrainError::Contract(e.to_string()))?;
            let outcome = train(graph, &train_set.subset(s), config)?;
            let eval = evaluate(&outcome.model, test_set, &test_idx, config)?;
            metric[slot] = match spec.head {
                Head::Classification => auc(&eval.labels, &eval.scores)?,
                Head::Segmentation => mean_std(&eval.values).0,
            };
        }
        points.push(SaturationPoint { fraction: *f, train_count: s.len(), full: metric[0], pocket: metric[1] });
    }
    let metric = match spec.head {
        Head::Classification => "auc",
        Head::Segmentation => "dice",
    };
    Ok(SaturationReport { metric: metric.into(), points, subsets })
}
