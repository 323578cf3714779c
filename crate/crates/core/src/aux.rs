//! Crop classifier trained semi-supervised on clean source crops and noisy
//! target crops. It rescores mined target boxes with a view of the data that
//! differs from the detector's: one mean-pooled vector over the box grown by
//! a context margin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::IntegralScene;
use crate::error::{Error, Result};
use crate::fusion::{fuse_categorical, one_hot, softened_one_hot, softmax, AlphaSchedule, CategoricalDistribution};
use crate::geometry::{iou, BoundingBox};
use crate::linalg::Matrix;

/// Context added around each crop before pooling, in cells.
pub const CROP_CONTEXT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SourceClean,
    TargetNoisy,
    MinedBackground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropSample {
    pub pooled_features: Vec<f64>,
    pub label: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxParams {
    pub weights: Matrix,
}

impl AuxParams {
    pub fn zeros(feature_dim: usize, num_classes: usize) -> Self {
        AuxParams {
            weights: Matrix::zeros(feature_dim + 1, num_classes + 1),
        }
    }

    pub fn logits(&self, pooled_features: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.weights.cols()];
        self.weights.affine(pooled_features, &mut out);
        out
    }
}

/// Softmax of the linear logits.
pub fn score(params: &AuxParams, pooled_features: &[f64]) -> CategoricalDistribution {
    let logits = params.logits(pooled_features);
    CategoricalDistribution::from_logits(logits)
        .unwrap_or_else(|_| CategoricalDistribution::uniform(params.weights.cols()))
}

/// Pooled crop descriptor: mean over the box grown by [`CROP_CONTEXT`],
/// clipped to the scene.
pub fn crop_features(scene: &IntegralScene, bbox: &BoundingBox) -> Vec<f64> {
    let grown = bbox
        .expand(CROP_CONTEXT)
        .clamp_to(scene.width() as f64, scene.height() as f64)
        .unwrap_or(*bbox);
    let mut out = vec![0.0; scene.feature_dim()];
    scene.roi_pool(&grown, &mut out);
    out
}

/// Rejection-samples up to `count` integer-aligned boxes with zero overlap
/// against every known box, at most 100 attempts per box.
pub fn mine_background_boxes<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    known_boxes: &[BoundingBox],
    count: usize,
    size_range: [usize; 2],
    rng: &mut R,
) -> Vec<BoundingBox> {
    let lo = size_range[0].max(1).min(width.min(height));
    let hi = size_range[1].clamp(lo, width.min(height));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..100 {
            let bw = rng.random_range(lo..=hi);
            let bh = rng.random_range(lo..=hi);
            let x = rng.random_range(0..=width - bw);
            let y = rng.random_range(0..=height - bh);
            let b = BoundingBox {
                x: x as f64,
                y: y as f64,
                w: bw as f64,
                h: bh as f64,
            };
            if known_boxes.iter().all(|k| iou(k, &b) == 0.0) {
                out.push(b);
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxTrainConfig {
    pub steps: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Smoothing of the noisy target labels.
    pub epsilon: f64,
    pub schedule: AlphaSchedule,
}

impl AuxTrainConfig {
    /// 100 -> 0.5 over the first 5/7 of `steps`.
    pub fn with_default_schedule(steps: u64, learning_rate: f64, batch_size: usize, epsilon: f64) -> Self {
        AuxTrainConfig {
            steps,
            learning_rate,
            batch_size,
            epsilon,
            schedule: AlphaSchedule {
                alpha_start: 100.0,
                alpha_end: 0.5,
                anneal_steps: (steps * 5 / 7).max(1),
            },
        }
    }
}

/// Target distribution for one crop at a given fusion weight. Clean and
/// background crops use their hard label; noisy target crops use the fusion
/// of the current prediction with the smoothed noisy label.
pub fn training_target(params: &AuxParams, crop: &CropSample, alpha: f64, epsilon: f64) -> Result<Vec<f64>> {
    let classes = params.weights.cols();
    match crop.provenance {
        Provenance::SourceClean | Provenance::MinedBackground => Ok(one_hot(crop.label, classes)),
        Provenance::TargetNoisy => {
            let current = score(params, &crop.pooled_features);
            let noisy = softened_one_hot(crop.label, epsilon, classes - 1)?;
            Ok(fuse_categorical(&current, &noisy, alpha)?.probabilities())
        }
    }
}

/// Mean cross entropy of `batch` against `targets` and its weight gradient.
fn batch_gradient(params: &AuxParams, batch: &[(&CropSample, Vec<f64>)]) -> (f64, Matrix) {
    let mut grad = Matrix::zeros(params.weights.rows(), params.weights.cols());
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (crop, target) in batch {
        let p = softmax(&params.logits(&crop.pooled_features));
        let delta: Vec<f64> = p.iter().zip(target).map(|(a, b)| (a - b) / n).collect();
        loss -= target
            .iter()
            .zip(&p)
            .map(|(q, pk)| if *q == 0.0 { 0.0 } else { q * pk.ln() })
            .sum::<f64>()
            / n;
        grad.add_outer(&crop.pooled_features, &delta);
    }
    (loss, grad)
}

/// SGD on cross entropy over minibatches drawn uniformly from both crop sets.
pub fn train_aux<R: Rng + ?Sized>(
    source_crops: &[CropSample],
    target_crops: &[CropSample],
    num_classes: usize,
    config: &AuxTrainConfig,
    rng: &mut R,
) -> Result<AuxParams> {
    if source_crops.is_empty() {
        return Err(Error::Parameter("aux training needs at least one source crop".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Parameter("aux batch size must be positive".into()));
    }
    config.schedule.validate()?;
    let feature_dim = source_crops[0].pooled_features.len();
    let all: Vec<&CropSample> = source_crops.iter().chain(target_crops).collect();
    for c in &all {
        if c.pooled_features.len() != feature_dim {
            return Err(Error::Dimension {
                expected: feature_dim,
                got: c.pooled_features.len(),
            });
        }
        if c.label > num_classes {
            return Err(Error::Parameter(format!("crop label {} out of range", c.label)));
        }
    }
    let mut params = AuxParams::zeros(feature_dim, num_classes);
    for step in 0..config.steps {
        let alpha = config.schedule.alpha_at(step);
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let crop = all[rng.random_range(0..all.len())];
            batch.push((crop, training_target(&params, crop, alpha, config.epsilon)?));
        }
        let (loss, grad) = batch_gradient(&params, &batch);
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::NonFinite(format!("aux loss {loss} at step {step} (alpha={alpha})")));
        }
        params.weights.sub_scaled(&grad, config.learning_rate);
    }
    Ok(params)
}
