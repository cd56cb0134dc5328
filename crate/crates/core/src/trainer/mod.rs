//! Minibatch Adam training, evaluation, cross-validation and data-saturation
//! sweeps over full and pocket variants.

mod crossval;
pub mod metrics;
mod model;
pub mod stats;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archgraph::{ArchGraph, Head};
use crate::data::{hflip, zscore, DataError, Dataset};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor, TensorError};

pub use crossval::{
    cross_validate, cross_validate_pair, nested_subsets, saturation_sweep, FoldResult, CrossValReport, SaturationPoint, SaturationReport, VariantSummary,
    COMPARABILITY_TOLERANCE,
};
pub use metrics::{auc, dice_coefficient};
pub use model::{Model, ParamSlot};
pub use stats::{wilcoxon_signed_rank, WilcoxonResult};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Tensor(TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    DiceL2,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs without a `min_delta` improvement in validation loss before the
    /// learning rate is divided by `plateau_factor`.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_delta: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Share of the training samples held out for the plateau rule.
    pub val_fraction: f64,
    /// Random horizontal flips.
    pub augment: bool,
    /// Per-image z-scoring.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            plateau_patience: 5,
            plateau_factor: 2.0,
            min_delta: 1e-4,
            seed: 7,
            loss: LossKind::DiceL2,
            val_fraction: 0.1,
            augment: true,
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr {} must be positive", self.lr));
        }
        if !(self.plateau_factor > 1.0) {
            problems.push(format!("plateau_factor {} must exceed 1", self.plateau_factor));
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            problems.push(format!("val_fraction {} must lie in [0, 1)", self.val_fraction));
        }
        if !(self.min_delta >= 0.0) {
            problems.push(format!("min_delta {} must be non-negative", self.min_delta));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(TrainError::Argument(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,lr";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.epochs {
            let val = r.val_loss.map(|v| format!("{v:.9}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:.9},{},{}", r.epoch, r.train_loss, val, r.lr);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
    pub epochs_run: usize,
    pub final_lr: f64,
}

/// One optimiser bound to a model.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub lr: f64,
    pub loss: LossKind,
    state: AdamState<f32>,
}

impl Trainer {
    pub fn new(model: Model, lr: f64, loss: LossKind) -> Self {
        let state = AdamState::new(&model.tensors, AdamConfig::default());
        Trainer { model, lr, loss, state }
    }

    fn record_loss(&self, tape: &mut Tape<f32>, x: Tensor<f32>, y: Tensor<f32>, trainable: bool) -> Result<(Vec<crate::tensor::Var>, crate::tensor::Var)> {
        self.model.check_input(x.shape())?;
        let vars = self.model.bind(tape, trainable);
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let out = self.model.forward(tape, &vars, xv)?;
        let loss = match self.loss {
            LossKind::DiceL2 => tape.dice_l2_loss(yv, out)?,
            LossKind::CrossEntropy => tape.cross_entropy(yv, out)?,
        };
        Ok((vars, loss))
    }

    /// Forward, backward and one Adam update; returns the batch loss.
    pub fn step(&mut self, x: Tensor<f32>, y: Tensor<f32>) -> Result<f64> {
        let mut tape = Tape::new();
        let (vars, loss) = self.record_loss(&mut tape, x, y, true)?;
        let value = f64::from(tape.value(loss).item());
        tape.backward(loss)?;
        let grads: Vec<Tensor<f32>> = vars
            .iter()
            .zip(&self.model.tensors)
            .map(|(v, p)| tape.take_grad(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        drop(tape);
        adam_step(&mut self.model.tensors, &grads, &mut self.state, self.lr)?;
        Ok(value)
    }

    /// Loss without an update.
    pub fn evaluate_loss(&self, x: Tensor<f32>, y: Tensor<f32>) -> Result<f64> {
        let mut tape = Tape::new();
        let (_, loss) = self.record_loss(&mut tape, x, y, false)?;
        Ok(f64::from(tape.value(loss).item()))
    }

    pub fn adam_steps(&self) -> u64 {
        self.state.step
    }
}

/// Training images ready for batching, with targets in loss layout.
pub(crate) struct Prepared {
    pub images: Vec<Tensor<f32>>,
    pub targets: Vec<Tensor<f32>>,
}

pub(crate) fn check_compatibility(graph: &ArchGraph, dataset: &Dataset, loss: LossKind) -> Result<()> {
    let spec = &graph.spec;
    match (spec.head, dataset, loss) {
        (Head::Segmentation, Dataset::Segmentation(_), LossKind::DiceL2) => {
            if spec.num_outputs != 1 {
                return Err(TrainError::Contract("segmentation training needs num_outputs = 1".into()));
            }
        }
        (Head::Classification, Dataset::Classification(_), LossKind::CrossEntropy) => {
            if spec.num_outputs < 2 {
                return Err(TrainError::Contract(
                    "cross-entropy training needs a softmax head with num_outputs >= 2".into(),
                ));
            }
        }
        (head, data, loss) => {
            return Err(TrainError::Contract(format!(
                "{head:?} head cannot train on {} data with {loss:?} loss",
                data.kind()
            )))
        }
    }
    if let Some(shape) = dataset.image_shape() {
        let batch_shape = [1, shape[0], shape[1], shape[2]];
        let model_check = Model {
            graph: graph.clone(),
            slots: Vec::new(),
            tensors: Vec::new(),
        };
        model_check.check_input(&batch_shape)?;
    }
    Ok(())
}

pub(crate) fn prepare(dataset: &Dataset, normalize: bool, num_outputs: usize) -> Result<Prepared> {
    let norm = |t: &Tensor<f32>| -> Result<Tensor<f32>> {
        Ok(if normalize { zscore(t)? } else { t.clone() })
    };
    match dataset {
        Dataset::Segmentation(s) => Ok(Prepared {
            images: s.iter().map(|x| norm(&x.image)).collect::<Result<_>>()?,
            targets: s.iter().map(|x| x.mask.clone()).collect(),
        }),
        Dataset::Classification(s) => Ok(Prepared {
            images: s.iter().map(|x| norm(&x.image)).collect::<Result<_>>()?,
            targets: s
                .iter()
                .map(|x| {
                    let mut v = vec![0.0; num_outputs];
                    v[usize::from(x.label).min(num_outputs - 1)] = 1.0;
                    Tensor::from_vec(&[num_outputs], v).expect("one-hot length")
                })
                .collect(),
        }),
    }
}

/// Stacks per-sample tensors into a batch with a leading axis.
pub(crate) fn stack(items: &[&Tensor<f32>]) -> Tensor<f32> {
    let mut shape = vec![items.len()];
    shape.extend_from_slice(items[0].shape());
    let mut values = Vec::with_capacity(items.len() * items[0].len());
    for t in items {
        values.extend_from_slice(t.values());
    }
    Tensor::from_vec(&shape, values).expect("equal sample shapes")
}

fn batch_iter(indices: &[usize], batch: usize) -> impl Iterator<Item = &[usize]> {
    indices.chunks(batch)
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const SPLIT_STREAM: u64 = 1 << 32;
const SHUFFLE_STREAM: u64 = (1 << 32) + 1;

/// Trains a fresh model on `dataset`, holding out `val_fraction` of it for
/// the plateau rule.
pub fn train(graph: &ArchGraph, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    check_compatibility(graph, dataset, config.loss)?;
    if dataset.is_empty() {
        return Err(TrainError::Argument("empty training set".into()));
    }
    let model = Model::init(graph, config.seed)?;
    let prepared = prepare(dataset, config.normalize, graph.spec.num_outputs)?;

    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(config.seed, SPLIT_STREAM));
    let mut n_val = (n as f64 * config.val_fraction).round() as usize;
    if config.val_fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    }
    let (val, fit) = order.split_at(n_val.min(n.saturating_sub(1)));
    let (val, mut fit) = (val.to_vec(), fit.to_vec());

    let mut trainer = Trainer::new(model, config.lr, config.loss);
    let mut history = History::default();
    let mut rng = seeded(config.seed, SHUFFLE_STREAM);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        fit.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in batch_iter(&fit, config.batch_size) {
            let flips: Vec<bool> = chunk.iter().map(|_| config.augment && rng.random_bool(0.5)).collect();
            let (x, y) = make_batch(&prepared, chunk, &flips, dataset);
            total += trainer.step(x, y)? * chunk.len() as f64;
        }
        let train_loss = total / fit.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for chunk in batch_iter(&val, config.batch_size) {
                let (x, y) = make_batch(&prepared, chunk, &vec![false; chunk.len()], dataset);
                sum += trainer.evaluate_loss(x, y)? * chunk.len() as f64;
            }
            Some(sum / val.len() as f64)
        };
        history.epochs.push(EpochRecord { epoch, train_loss, val_loss, lr: trainer.lr });
        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best - config.min_delta {
            best = monitored;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.plateau_patience {
                trainer.lr /= config.plateau_factor;
                stale = 0;
            }
        }
    }
    let final_lr = trainer.lr;
    Ok(TrainOutcome { model: trainer.model, history, epochs_run: config.epochs, final_lr })
}

fn make_batch(p: &Prepared, chunk: &[usize], flips: &[bool], dataset: &Dataset) -> (Tensor<f32>, Tensor<f32>) {
    let seg = matches!(dataset, Dataset::Segmentation(_));
    let flipped: Vec<(Tensor<f32>, Tensor<f32>)> = chunk
        .iter()
        .zip(flips)
        .filter(|(_, f)| **f)
        .map(|(&i, _)| (hflip(&p.images[i]), if seg { hflip(&p.targets[i]) } else { p.targets[i].clone() }))
        .collect();
    let mut fi = flipped.iter();
    let mut xs = Vec::with_capacity(chunk.len());
    let mut ys = Vec::with_capacity(chunk.len());
    for (&i, &f) in chunk.iter().zip(flips) {
        if f {
            let (x, y) = fi.next().expect("one flipped pair per flag");
            xs.push(x);
            ys.push(y);
        } else {
            xs.push(&p.images[i]);
            ys.push(&p.targets[i]);
        }
    }
    (stack(&xs), stack(&ys))
}

/// Per-sample predictions of `model` on `indices` of `dataset`.
pub fn predict(model: &Model, dataset: &Dataset, indices: &[usize], normalize: bool, batch: usize) -> Result<Vec<Tensor<f32>>> {
    let prepared = prepare(&dataset.subset(indices), normalize, model.graph.spec.num_outputs)?;
    let all: Vec<usize> = (0..indices.len()).collect();
    let mut out = Vec::with_capacity(indices.len());
    for chunk in batch_iter(&all, batch.max(1)) {
        let xs: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &prepared.images[i]).collect();
        let y = model.predict(stack(&xs))?;
        let per = y.len() / chunk.len();
        let sample_shape = &y.shape()[1..];
        for c in y.values().chunks(per) {
            out.push(Tensor::from_vec(sample_shape, c.to_vec()).expect("chunk matches sample shape"));
        }
    }
    Ok(out)
}

/// Per-sample test metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// Dataset indices that produced a defined metric.
    pub indices: Vec<usize>,
    /// Dice (segmentation) or 0/1 correctness (classification).
    pub values: Vec<f64>,
    /// Samples whose metric is undefined (both masks empty).
    pub excluded: usize,
    /// Positive-class scores and labels (classification only).
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

pub fn evaluate(model: &Model, dataset: &Dataset, indices: &[usize], config: &TrainConfig) -> Result<Evaluation> {
    let preds = predict(model, dataset, indices, config.normalize, config.batch_size)?;
    let mut eval = Evaluation { indices: Vec::new(), values: Vec::new(), excluded: 0, scores: Vec::new(), labels: Vec::new() };
    for (&i, pred) in indices.iter().zip(&preds) {
        match dataset {
            Dataset::Segmentation(s) => {
                match dice_coefficient(&metrics::binarize(pred.values()), s[i].mask.values()) {
                    Ok(d) => {
                        eval.indices.push(i);
                        eval.values.push(d);
                    }
                    Err(TrainError::Domain(_)) => eval.excluded += 1,
                    Err(e) => return Err(e),
                }
            }
            Dataset::Classification(s) => {
                let p = pred.values();
                let argmax = p
                    .iter()
                    .enumerate()
                    .fold((0, f32::MIN), |best, (j, &v)| if v > best.1 { (j, v) } else { best })
                    .0;
                eval.indices.push(i);
                eval.values.push(f64::from(u8::from(argmax == usize::from(s[i].label))));
                eval.scores.push(f64::from(p[1.min(p.len() - 1)]));
                eval.labels.push(s[i].label);
            }
        }
    }
    Ok(eval)
}
