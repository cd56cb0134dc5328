//! Synthetic datasets and intensity preprocessing.
//!
//! `gen_blobs` draws ellipses over a tiled background for segmentation;
//! `gen_twoclass` draws the same background with or without one ellipse for
//! classification. Every generator is a pure function of its seed and
//! parameters.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::write_atomic;
use crate::tensor::npy::{self, NpyError};
use crate::tensor::{Scalar, Tensor};

/// Side of the square background tiles, in pixels.
pub const TILE: usize = 8;
/// Texture amplitude: tiles take values in `[-TEXTURE, TEXTURE]`.
pub const TEXTURE: f32 = 0.3;
/// Added intensity inside ellipses.
pub const FOREGROUND: f32 = 1.0;
/// Noise level of `gen_twoclass` images.
pub const TWOCLASS_NOISE: f32 = 0.1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("npy error in {path}: {source}")]
    Npy {
        path: String,
        #[source]
        source: NpyError,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSample {
    /// `(1, H, W)`.
    pub image: Tensor<f32>,
    /// `(1, H, W)` with values in `{0, 1}`.
    pub mask: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationSample {
    /// `(1, H, W)`.
    pub image: Tensor<f32>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Segmentation(Vec<SegmentationSample>),
    Classification(Vec<ClassificationSample>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Segmentation(s) => s.len(),
            Dataset::Classification(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, i: usize) -> &Tensor<f32> {
        match self {
            Dataset::Segmentation(s) => &s[i].image,
            Dataset::Classification(s) => &s[i].image,
        }
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        (!self.is_empty()).then(|| self.image(0).shape())
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        match self {
            Dataset::Segmentation(s) => Dataset::Segmentation(indices.iter().map(|&i| s[i].clone()).collect()),
            Dataset::Classification(s) => Dataset::Classification(indices.iter().map(|&i| s[i].clone()).collect()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Dataset::Segmentation(_) => "segmentation",
            Dataset::Classification(_) => "classification",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f32,
    cx: f32,
    ry: f32,
    rx: f32,
    cos: f32,
    sin: f32,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, size: usize, radius: (f32, f32)) -> Self {
        let s = size as f32;
        let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
        Ellipse {
            cy: rng.random_range(0.25..0.75) * s,
            cx: rng.random_range(0.25..0.75) * s,
            ry: rng.random_range(radius.0..radius.1) * s,
            rx: rng.random_range(radius.0..radius.1) * s,
            cos: theta.cos(),
            sin: theta.sin(),
        }
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f32 + 0.5 - self.cy;
        let dx = x as f32 + 0.5 - self.cx;
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

fn check_size(size: usize) -> Result<()> {
    if size == 0 || size % TILE != 0 {
        return Err(DataError::Argument(format!("size {size} must be a positive multiple of {TILE}")));
    }
    Ok(())
}

fn texture(rng: &mut ChaCha8Rng, size: usize) -> Vec<f32> {
    let tiles = size / TILE;
    let values: Vec<f32> = (0..tiles * tiles).map(|_| rng.random_range(-TEXTURE..TEXTURE)).collect();
    (0..size * size)
        .map(|i| values[(i / size / TILE) * tiles + (i % size) / TILE])
        .collect()
}

fn add_noise(rng: &mut ChaCha8Rng, image: &mut [f32], sigma: f32) -> Result<()> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(DataError::Argument(format!("noise sigma {sigma} must be finite and non-negative")));
    }
    if sigma > 0.0 {
        let normal = Normal::new(0.0f32, sigma).expect("sigma validated");
        for v in image.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok(())
}

fn plane(size: usize, values: Vec<f32>) -> Tensor<f32> {
    Tensor::from_vec(&[1, size, size], values).expect("plane length matches")
}

/// Segmentation images with one to three ellipses each.
pub fn gen_blobs(seed: u64, count: usize, size: usize, noise_sigma: f32) -> Result<Vec<SegmentationSample>> {
    check_size(size)?;
    if count == 0 {
        return Err(DataError::Argument("count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut image = texture(&mut rng, size);
            let n = rng.random_range(1..=3);
            let ellipses: Vec<Ellipse> = (0..n).map(|_| Ellipse::random(&mut rng, size, (0.08, 0.2))).collect();
            let mut mask = vec![0.0f32; size * size];
            for (i, m) in mask.iter_mut().enumerate() {
                if ellipses.iter().any(|e| e.contains(i / size, i % size)) {
                    *m = 1.0;
                    image[i] += FOREGROUND;
                }
            }
            add_noise(&mut rng, &mut image, noise_sigma)?;
            Ok(SegmentationSample { image: plane(size, image), mask: plane(size, mask) })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassBalance {
    Balanced,
    /// `negatives : positives`.
    Ratio { negatives: u64, positives: u64 },
}

impl ClassBalance {
    /// Negative-to-positive ratio of the COVIDx8B training set.
    pub const COVIDX: ClassBalance = ClassBalance::Ratio { negatives: 13_794, positives: 2_158 };

    pub fn positives(&self, count: usize) -> Result<usize> {
        match *self {
            ClassBalance::Balanced => Ok(count / 2),
            ClassBalance::Ratio { negatives, positives } => {
                let total = negatives + positives;
                if total == 0 {
                    return Err(DataError::Argument("class ratio must have a nonzero total".into()));
                }
                Ok(((count as f64) * positives as f64 / total as f64).round() as usize)
            }
        }
    }
}

/// Classification images: label 1 carries one bright ellipse.
pub fn gen_twoclass(seed: u64, count: usize, size: usize, balance: ClassBalance) -> Result<Vec<ClassificationSample>> {
    check_size(size)?;
    if count == 0 {
        return Err(DataError::Argument("count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positives = balance.positives(count)?;
    let mut labels: Vec<u8> = (0..count).map(|i| u8::from(i < positives)).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .map(|label| {
            let mut image = texture(&mut rng, size);
            if label == 1 {
                let e = Ellipse::random(&mut rng, size, (0.1, 0.2));
                for (i, v) in image.iter_mut().enumerate() {
                    if e.contains(i / size, i % size) {
                        *v += FOREGROUND;
                    }
                }
            }
            add_noise(&mut rng, &mut image, TWOCLASS_NOISE)?;
            Ok(ClassificationSample { image: plane(size, image), label })
        })
        .collect()
}

fn moments<T: Scalar>(values: &[T]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|v| (v.to_f64().unwrap_or(f64::NAN) - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Shifts and scales to zero mean and unit (population) standard deviation.
pub fn zscore<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    if image.is_empty() {
        return Err(DataError::Domain("empty image".into()));
    }
    let (mean, std) = moments(image.values());
    if !(std > 0.0) || !std.is_finite() {
        return Err(DataError::Domain("image has zero variance".into()));
    }
    Ok(image.map(|v| T::lit((v.to_f64().unwrap_or(f64::NAN) - mean) / std)))
}

/// Clamps intensities to `[lo, hi]`.
pub fn window<T: Scalar>(image: &Tensor<T>, lo: T, hi: T) -> Result<Tensor<T>> {
    if !(lo < hi) {
        return Err(DataError::Argument(format!("window lower bound {lo} must be below upper bound {hi}")));
    }
    Ok(image.map(|v| v.max(lo).min(hi)))
}

/// Mirrors the last axis.
pub fn hflip<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let w = *image.shape().last().unwrap_or(&1);
    let mut out = image.clone();
    if w > 0 {
        for (dst, src) in out.values_mut().chunks_mut(w).zip(image.values().chunks(w)) {
            for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *s;
            }
        }
    }
    out
}

/// Partitions `0..count` into `k` shuffled folds whose sizes differ by at
/// most one; the first `count % k` folds take the extra element.
pub fn kfold_split(count: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || count < k {
        return Err(DataError::Argument(format!("need k >= 2 and count >= k, got k={k}, count={count}")));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (count / k, count % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// Provenance written beside an exported dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: String,
    pub generator: String,
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub params: serde_json::Value,
    /// Classification labels, in sample order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

fn image_name(i: usize) -> String {
    format!("image_{i:05}.npy")
}

fn mask_name(i: usize) -> String {
    format!("mask_{i:05}.npy")
}

/// Writes one NPY file per image (and mask) plus `manifest.json`.
pub fn export(dir: &Path, dataset: &Dataset, mut manifest: Manifest) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    manifest.kind = dataset.kind().into();
    manifest.count = dataset.len();
    match dataset {
        Dataset::Segmentation(samples) => {
            for (i, s) in samples.iter().enumerate() {
                let p = dir.join(image_name(i));
                write_atomic(&p, &npy::encode(&s.image)).map_err(io_err(&p))?;
                let p = dir.join(mask_name(i));
                write_atomic(&p, &npy::encode(&s.mask)).map_err(io_err(&p))?;
            }
            manifest.labels = None;
        }
        Dataset::Classification(samples) => {
            for (i, s) in samples.iter().enumerate() {
                let p = dir.join(image_name(i));
                write_atomic(&p, &npy::encode(&s.image)).map_err(io_err(&p))?;
            }
            manifest.labels = Some(samples.iter().map(|s| s.label).collect());
        }
    }
    let p = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    write_atomic(&p, &json).map_err(io_err(&p))
}

/// Reads a directory written by [`export`].
pub fn import(dir: &Path) -> Result<(Dataset, Manifest)> {
    let p = dir.join("manifest.json");
    let bytes = std::fs::read(&p).map_err(io_err(&p))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| DataError::Manifest(e.to_string()))?;
    let read = |name: String| -> Result<Tensor<f32>> {
        let p = dir.join(name);
        let bytes = std::fs::read(&p).map_err(io_err(&p))?;
        npy::decode_tensor(&bytes).map_err(|source| DataError::Npy { path: p.display().to_string(), source })
    };
    let dataset = match manifest.kind.as_str() {
        "segmentation" => Dataset::Segmentation(
            (0..manifest.count)
                .map(|i| Ok(SegmentationSample { image: read(image_name(i))?, mask: read(mask_name(i))? }))
                .collect::<Result<_>>()?,
        ),
        "classification" => {
            let labels = manifest
                .labels
                .clone()
                .filter(|l| l.len() == manifest.count)
                .ok_or_else(|| DataError::Manifest("labels missing or of the wrong length".into()))?;
            Dataset::Classification(
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, &label)| Ok(ClassificationSample { image: read(image_name(i))?, label }))
                    .collect::<Result<_>>()?,
            )
        }
        other => return Err(DataError::Manifest(format!("unknown dataset kind {other:?}"))),
    };
    Ok((dataset, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guards() {
        assert!(gen_blobs(0, 1, 12, 0.0).is_err());
        assert!(gen_blobs(0, 0, 16, 0.0).is_err());
        assert!(gen_blobs(0, 1, 16, -1.0).is_err());
        assert!(kfold_split(3, 1, 0).is_err());
        assert!(kfold_split(3, 4, 0).is_err());
    }

    #[test]
    fn hflip_reverses_rows() {
        let t = Tensor::from_vec(&[1, 2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(hflip(&t).values(), &[3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        assert_eq!(hflip(&hflip(&t)), t);
    }
}
