//! Peak tensor memory and step time of full versus pocket training.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::archgraph::ArchGraph;
use crate::data::Dataset;
use crate::costmodel::BYTES_PER_VALUE;
use crate::tensor::{track, MemoryTracker};
use crate::trainer::{LossKind, Model, TrainError, Trainer};

/// Steps discarded before timing.
pub const WARMUP_STEPS: usize = 3;
/// Minimum timed steps per batch size.
pub const MIN_MEASURED_STEPS: usize = 10;
pub const CSV_HEADER: &str = "variant,batch,peak_bytes,params_bytes,mean_step_s";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRecord {
    pub variant: String,
    pub batch_size: usize,
    /// High-water mark of live tensor buffers, including parameters,
    /// optimiser moments, activations, gradients and conv workspace.
    pub peak_alloc_bytes: u64,
    pub params_bytes: u64,
    pub mean_step_seconds: f64,
    pub measured_steps: usize,
}

impl ProfileRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6}",
            self.variant, self.batch_size, self.peak_alloc_bytes, self.params_bytes, self.mean_step_seconds
        )
    }
}

/// Trains `graph` for `steps` Adam steps at each batch size, starting from a
/// fresh model each time, and records peak memory and mean step time after
/// the warmup steps.
pub fn profile(
    graph: &ArchGraph,
    dataset: &Dataset,
    batch_sizes: &[usize],
    steps: usize,
    seed: u64,
) -> Result<Vec<ProfileRecord>> {
    if steps < WARMUP_STEPS + MIN_MEASURED_STEPS {
        return Err(BenchError::Argument(format!(
            "need at least {} steps ({WARMUP_STEPS} warmup + {MIN_MEASURED_STEPS} measured), got {steps}",
            WARMUP_STEPS + MIN_MEASURED_STEPS
        )));
    }
    let seg = matches!(dataset, Dataset::Segmentation(_));
    let loss = if seg { LossKind::DiceL2 } else { LossKind::CrossEntropy };
    crate::trainer::check_compatibility(graph, dataset, loss)?;
    let prepared = crate::trainer::prepare(dataset, true, graph.spec.num_outputs)?;
    let variant = if graph.spec.pocket { "pocket" } else { "full" };
    let mut records = Vec::new();
    for &batch in batch_sizes {
        if batch == 0 || batch > dataset.len() {
            return Err(BenchError::Argument(format!(
                "batch size {batch} outside 1..={} (dataset size)",
                dataset.len()
            )));
        }
        let tracker = MemoryTracker::new();
        let _guard = track(&tracker);
        let model = Model::init(graph, seed)?;
        let params_bytes = model.param_count() * BYTES_PER_VALUE;
        let mut trainer = Trainer::new(model, 1e-3, loss);
        let mut times = Vec::with_capacity(steps - WARMUP_STEPS);
        for step in 0..steps {
            let idx: Vec<usize> = (0..batch).map(|j| (step * batch + j) % dataset.len()).collect();
            let xs: Vec<_> = idx.iter().map(|&i| &prepared.images[i]).collect();
            let ys: Vec<_> = idx.iter().map(|&i| &prepared.targets[i]).collect();
            let (x, y) = (crate::trainer::stack(&xs), crate::trainer::stack(&ys));
            let start = Instant::now();
            trainer.step(x, y)?;
            let elapsed = start.elapsed().as_secs_f64();
            if step >= WARMUP_STEPS {
                times.push(elapsed);
            }
        }
        drop(trainer);
        records.push(ProfileRecord {
            variant: variant.into(),
            batch_size: batch,
            peak_alloc_bytes: tracker.peak_bytes(),
            params_bytes,
            mean_step_seconds: times.iter().sum::<f64>() / times.len() as f64,
            measured_steps: times.len(),
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SavingsRow {
    pub batch_size: usize,
    pub memory_pct: f64,
    pub time_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub csv: String,
    pub savings: Vec<SavingsRow>,
    pub summary: String,
}

/// `100 * (1 - pocket / full)`.
pub fn savings_pct(full: f64, pocket: f64) -> f64 {
    100.0 * (1.0 - pocket / full)
}

/// Per-record CSV plus pocket-versus-full savings for every batch size. Each
/// batch size needs exactly one record per variant.
pub fn sweep_report(records: &[ProfileRecord]) -> Result<SweepReport> {
    if records.is_empty() {
        return Err(BenchError::Argument("no profile records".into()));
    }
    let mut csv = format!("{CSV_HEADER}\n");
    for r in records {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    let mut batches: Vec<usize> = records.iter().map(|r| r.batch_size).collect();
    batches.sort_unstable();
    batches.dedup();
    let mut savings = Vec::new();
    for b in batches {
        let pick = |variant: &str| -> Result<&ProfileRecord> {
            let found: Vec<&ProfileRecord> =
                records.iter().filter(|r| r.batch_size == b && r.variant == variant).collect();
            match found.as_slice() {
                [one] => Ok(one),
                _ => Err(BenchError::Argument(format!(
                    "batch {b}: expected one {variant} record, found {}",
                    found.len()
                ))),
            }
        };
        let (full, pocket) = (pick("full")?, pick("pocket")?);
        savings.push(SavingsRow {
            batch_size: b,
            memory_pct: savings_pct(full.peak_alloc_bytes as f64, pocket.peak_alloc_bytes as f64),
            time_pct: savings_pct(full.mean_step_seconds, pocket.mean_step_seconds),
        });
    }
    if records.len() != 2 * savings.len() {
        return Err(BenchError::Argument("records contain variants other than full and pocket".into()));
    }
    let range = |f: fn(&SavingsRow) -> f64| {
        let v: Vec<f64> = savings.iter().map(f).collect();
        (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    };
    let (mlo, mhi) = range(|s| s.memory_pct);
    let (tlo, thi) = range(|s| s.time_pct);
    let mut summary = String::new();
    let _ = writeln!(summary, "batch  memory_savings_%  time_savings_%");
    for s in &savings {
        let _ = writeln!(summary, "{:>5}  {:>16.1}  {:>14.1}", s.batch_size, s.memory_pct, s.time_pct);
    }
    let _ = writeln!(summary, "Pocket peak memory savings between {mlo:.1}% and {mhi:.1}%.");
    let _ = writeln!(summary, "Pocket time-per-step savings between {tlo:.1}% and {thi:.1}%.");
    Ok(SweepReport { csv, savings, summary })
}
