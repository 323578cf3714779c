//! Linear (optionally one-hidden-layer) classification and box regression
//! heads over region features, with exact analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::features::{roi_feature_dim, roi_features};
use crate::detector::scene::IntegralScene;
use crate::error::{Error, Result};
use crate::fusion::{log_softmax, softmax, CategoricalDistribution};
use crate::geometry::{decode, encode, BoundingBox};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Width of an optional shared tanh layer in front of both heads.
    #[serde(default)]
    pub hidden_units: Option<usize>,
    /// Weight of the box regression term.
    pub lambda_reg: f64,
    /// Half-width of the uniform initialization interval.
    pub init_scale: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            hidden_units: None,
            lambda_reg: 1.0,
            init_scale: 0.01,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_reg >= 0.0) || !self.lambda_reg.is_finite() {
            return Err(Error::Config("detector.lambda_reg must be finite and >= 0".into()));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::Config("detector.init_scale must be finite and >= 0".into()));
        }
        if self.hidden_units == Some(0) {
            return Err(Error::Config("detector.hidden_units must be positive when set".into()));
        }
        Ok(())
    }
}

/// Head weights. Matrices have one row per input plus a bias row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub hidden: Option<Matrix>,
    pub cls_weights: Matrix,
    pub reg_weights: Matrix,
}

impl DetectorParams {
    /// Zero-mean uniform `(-init_scale, init_scale)` initialization.
    pub fn init<R: Rng + ?Sized>(
        feature_dim: usize,
        num_classes: usize,
        config: &DetectorConfig,
        rng: &mut R,
    ) -> Self {
        let input = roi_feature_dim(feature_dim);
        let s = config.init_scale;
        let mut draw = |rows, cols| {
            Matrix::from_fn(rows, cols, |_, _| {
                if s == 0.0 {
                    0.0
                } else {
                    rng.random_range(-s..s)
                }
            })
        };
        let (hidden, head_in) = match config.hidden_units {
            Some(units) => (Some(draw(input + 1, units)), units),
            None => (None, input),
        };
        DetectorParams {
            hidden,
            cls_weights: draw(head_in + 1, num_classes + 1),
            reg_weights: draw(head_in + 1, 4),
        }
    }

    pub fn zeros(feature_dim: usize, num_classes: usize) -> Self {
        let input = roi_feature_dim(feature_dim);
        DetectorParams {
            hidden: None,
            cls_weights: Matrix::zeros(input + 1, num_classes + 1),
            reg_weights: Matrix::zeros(input + 1, 4),
        }
    }

    pub fn zeros_like(&self) -> Self {
        DetectorParams {
            hidden: self.hidden.as_ref().map(|h| Matrix::zeros(h.rows(), h.cols())),
            cls_weights: Matrix::zeros(self.cls_weights.rows(), self.cls_weights.cols()),
            reg_weights: Matrix::zeros(self.reg_weights.rows(), self.reg_weights.cols()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.cls_weights.cols()
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some(h) => h.rows() - 1,
            None => self.cls_weights.rows() - 1,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.cls_weights.is_finite()
            && self.reg_weights.is_finite()
            && self.hidden.as_ref().is_none_or(|h| h.is_finite())
    }

    /// Visits every parameter matrix in a fixed order.
    pub fn matrices(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = self.hidden.iter().collect();
        v.push(&self.cls_weights);
        v.push(&self.reg_weights);
        v
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = self.hidden.iter_mut().collect();
        v.push(&mut self.cls_weights);
        v.push(&mut self.reg_weights);
        v
    }

    /// `params -= learning_rate * grads`.
    pub fn sgd_step(&mut self, grads: &DetectorParams, learning_rate: f64) {
        if let (Some(h), Some(g)) = (self.hidden.as_mut(), grads.hidden.as_ref()) {
            h.sub_scaled(g, learning_rate);
        }
        self.cls_weights.sub_scaled(&grads.cls_weights, learning_rate);
        self.reg_weights.sub_scaled(&grads.reg_weights, learning_rate);
    }
}

/// Functional form of [`DetectorParams::sgd_step`].
pub fn sgd_step(params: &DetectorParams, grads: &DetectorParams, learning_rate: f64) -> DetectorParams {
    let mut next = params.clone();
    next.sgd_step(grads, learning_rate);
    next
}

/// Raw head outputs for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub logits: Vec<f64>,
    pub offsets: [f64; 4],
}

struct Activations {
    hidden: Option<Vec<f64>>,
    out: HeadOutput,
}

fn run_heads(params: &DetectorParams, features: &[f64]) -> Activations {
    let hidden = params.hidden.as_ref().map(|w| {
        let mut h = vec![0.0; w.cols()];
        w.affine(features, &mut h);
        h.iter_mut().for_each(|v| *v = v.tanh());
        h
    });
    let z = hidden.as_deref().unwrap_or(features);
    let mut logits = vec![0.0; params.cls_weights.cols()];
    params.cls_weights.affine(z, &mut logits);
    let mut offsets = [0.0; 4];
    params.reg_weights.affine(z, &mut offsets);
    Activations {
        hidden,
        out: HeadOutput { logits, offsets },
    }
}

/// Head outputs from precomputed region features.
pub fn forward_features(params: &DetectorParams, features: &[f64]) -> HeadOutput {
    run_heads(params, features).out
}

/// Class distribution and decoded box for one proposal.
pub fn forward(
    params: &DetectorParams,
    scene: &IntegralScene,
    proposal: &BoundingBox,
) -> (CategoricalDistribution, BoundingBox) {
    let mut features = vec![0.0; roi_feature_dim(scene.feature_dim())];
    roi_features(scene, proposal, &mut features);
    let out = forward_features(params, &features);
    let dist = CategoricalDistribution::from_logits(out.logits).unwrap_or_else(|_| {
        CategoricalDistribution::uniform(params.num_classes())
    });
    (dist, decode(&out.offsets, proposal))
}

/// One supervised region: features, the proposal they came from, a target
/// distribution, and a box target for foreground regions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub features: Vec<f64>,
    pub proposal: BoundingBox,
    pub soft_label: Vec<f64>,
    pub box_target: Option<BoundingBox>,
}

/// Mean soft-target cross entropy plus `lambda_reg` times the mean (over
/// foreground instances) squared error of the encoded box offsets.
///
/// Instances are reduced in order, so the result does not depend on how the
/// forward passes were scheduled.
pub fn loss_and_gradients(
    params: &DetectorParams,
    batch: &[TrainingInstance],
    lambda_reg: f64,
) -> Result<(f64, DetectorParams)> {
    let mut grads = params.zeros_like();
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let n = batch.len() as f64;
    let n_fg = batch.iter().filter(|i| i.box_target.is_some()).count();
    let reg_scale = if n_fg > 0 { lambda_reg / n_fg as f64 } else { 0.0 };
    let classes = params.num_classes();

    let mut total = 0.0;
    let mut dlogits = vec![0.0; classes];
    for (idx, inst) in batch.iter().enumerate() {
        if inst.soft_label.len() != classes {
            return Err(Error::Dimension {
                expected: classes,
                got: inst.soft_label.len(),
            });
        }
        if inst.features.len() != params.input_dim() {
            return Err(Error::Dimension {
                expected: params.input_dim(),
                got: inst.features.len(),
            });
        }
        let acts = run_heads(params, &inst.features);
        let lsm = log_softmax(&acts.out.logits);
        let p = softmax(&acts.out.logits);
        let q_sum: f64 = inst.soft_label.iter().sum();
        let ce: f64 = -inst.soft_label.iter().zip(&lsm).map(|(q, l)| q * l).sum::<f64>();
        for k in 0..classes {
            dlogits[k] = (p[k] * q_sum - inst.soft_label[k]) / n;
        }
        total += ce / n;

        let mut doffsets = [0.0; 4];
        if let Some(target) = &inst.box_target {
            let t = encode(target, &inst.proposal);
            for k in 0..4 {
                let d = acts.out.offsets[k] - t[k];
                total += reg_scale * d * d;
                doffsets[k] = 2.0 * reg_scale * d;
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss became {total} at batch item {idx}: logits={:?} offsets={:?} target={:?} box_target={:?}",
                acts.out.logits, acts.out.offsets, inst.soft_label, inst.box_target
            )));
        }

        let z = acts.hidden.as_deref().unwrap_or(&inst.features);
        grads.cls_weights.add_outer(z, &dlogits);
        if inst.box_target.is_some() {
            grads.reg_weights.add_outer(z, &doffsets);
        }
        if let (Some(w_hidden), Some(h)) = (params.hidden.as_ref(), acts.hidden.as_ref()) {
            let mut dz = vec![0.0; h.len()];
            let mut dz_reg = vec![0.0; h.len()];
            params.cls_weights.back(&dlogits, &mut dz);
            params.reg_weights.back(&doffsets, &mut dz_reg);
            for ((g, r), hv) in dz.iter_mut().zip(&dz_reg).zip(h) {
                *g = (*g + r) * (1.0 - hv * hv);
            }
            let gh = grads.hidden.as_mut().expect("gradient mirrors params");
            debug_assert_eq!(w_hidden.cols(), dz.len());
            gh.add_outer(&inst.features, &dz);
        }
    }
    Ok((total, grads))
}

/// Checks that a training target is a distribution of the right length.
pub fn validate_soft_label(label: &[f64], classes: usize) -> Result<()> {
    if label.len() != classes {
        return Err(Error::Dimension {
            expected: classes,
            got: label.len(),
        });
    }
    let sum: f64 = label.iter().sum();
    if label.iter().any(|q| !(*q >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("soft label is not a distribution: {label:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::one_hot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_params(hidden: Option<usize>, seed: u64) -> DetectorParams {
        let cfg = DetectorConfig {
            hidden_units: hidden,
            lambda_reg: 1.0,
            init_scale: 0.5,
        };
        DetectorParams::init(1, 2, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn zero_weights_give_uniform_scores_and_identity_boxes() {
        let mut s = crate::detector::scene::Scene::zeros(6, 6, 2);
        s.features.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 0.1);
        let integral = IntegralScene::new(&s);
        let params = DetectorParams::zeros(2, 3);
        let proposal = BoundingBox::new(1.0, 1.0, 3.0, 2.0).unwrap();
        let (dist, bbox) = forward(&params, &integral, &proposal);
        assert_eq!(dist.probabilities(), vec![0.25; 4]);
        assert_eq!(bbox, proposal);
    }

    #[test]
    fn hand_set_weights_give_hand_computed_logits() {
        // two inputs, two classes: logits = W^T [x; 1]
        let mut params = DetectorParams {
            hidden: None,
            cls_weights: Matrix::zeros(3, 2),
            reg_weights: Matrix::zeros(3, 4),
        };
        let w = [[1.0, -2.0], [0.5, 3.0], [0.25, -0.75]];
        for (r, row) in w.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                params.cls_weights.set(r, c, *v);
            }
        }
        let out = forward_features(&params, &[2.0, -1.0]);
        // class 0: 1*2 + 0.5*(-1) + 0.25 = 1.75; class 1: -2*2 + 3*(-1) - 0.75 = -7.75
        assert_eq!(out.logits, vec![1.75, -7.75]);
    }

    #[test]
    fn self_consistent_target_has_zero_class_gradient() {
        let params = tiny_params(None, 3);
        let features: Vec<f64> = (0..params.input_dim()).map(|i| (i as f64 * 0.3).sin()).collect();
        let p = softmax(&forward_features(&params, &features).logits);
        let entropy: f64 = -p.iter().map(|v| v * v.ln()).sum::<f64>();
        let inst = TrainingInstance {
            features,
            proposal: BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap(),
            soft_label: p,
            box_target: None,
        };
        let (loss, grads) = loss_and_gradients(&params, &[inst], 1.0).unwrap();
        assert!((loss - entropy).abs() < 1e-12);
        assert!(grads.cls_weights.as_slice().iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn one_hot_target_is_standard_cross_entropy() {
        let params = tiny_params(None, 5);
        let features: Vec<f64> = (0..params.input_dim()).map(|i| i as f64 * 0.1 - 0.2).collect();
        let lsm = log_softmax(&forward_features(&params, &features).logits);
        let inst = TrainingInstance {
            features,
            proposal: BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap(),
            soft_label: one_hot(2, 3),
            box_target: None,
        };
        let (loss, _) = loss_and_gradients(&params, &[inst], 1.0).unwrap();
        assert!((loss + lsm[2]).abs() < 1e-14);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let params = tiny_params(Some(3), 1);
        let grads = tiny_params(Some(3), 2);
        assert_eq!(sgd_step(&params, &grads, 0.0), params);
    }

    #[test]
    fn small_step_decreases_loss() {
        let params = tiny_params(Some(4), 9);
        let features: Vec<f64> = (0..params.input_dim()).map(|i| (i as f64).cos()).collect();
        let batch = vec![TrainingInstance {
            features,
            proposal: BoundingBox::new(1.0, 1.0, 4.0, 3.0).unwrap(),
            soft_label: vec![0.1, 0.7, 0.2],
            box_target: Some(BoundingBox::new(1.5, 0.5, 5.0, 3.0).unwrap()),
        }];
        let (before, grads) = loss_and_gradients(&params, &batch, 1.0).unwrap();
        let next = sgd_step(&params, &grads, 1e-3);
        let (after, _) = loss_and_gradients(&next, &batch, 1.0).unwrap();
        assert!(after < before);
        assert_eq!(sgd_step(&params, &grads, 1e-3), next);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let params = tiny_params(None, 1);
        let inst = TrainingInstance {
            features: vec![f64::NAN; params.input_dim()],
            proposal: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            soft_label: one_hot(0, 3),
            box_target: None,
        };
        assert!(matches!(loss_and_gradients(&params, &[inst], 1.0), Err(Error::NonFinite(_))));
    }
}
