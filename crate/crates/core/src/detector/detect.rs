use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detector::anchors::Proposal;
use crate::detector::features::{roi_feature_dim, roi_features};
use crate::detector::model::{forward_features, DetectorParams};
use crate::detector::scene::IntegralScene;
use crate::error::{Error, Result};
use crate::fusion::softmax;
use crate::geometry::{decode, iou, BoundingBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    /// Per-class candidate cap applied before suppression.
    pub pre_nms_top_k: usize,
    /// Per-scene cap on returned detections.
    pub max_detections: usize,
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("score_threshold", self.score_threshold), ("nms_iou", self.nms_iou)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.pre_nms_top_k == 0 || self.max_detections == 0 {
            return Err(Error::Config("pre_nms_top_k and max_detections must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_index: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub proposal_index: usize,
}

/// Ranking used everywhere: higher score first, then smaller proposal index.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.proposal_index.cmp(&b.proposal_index))
}

/// Greedy suppression within one class. Returns the survivors in rank order;
/// a box is dropped when a kept, higher-ranked box overlaps it with IoU
/// strictly above `iou_threshold`.
pub fn nms(candidates: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(rank);
    let mut kept: Vec<Detection> = Vec::new();
    for cand in sorted {
        if kept.iter().all(|k| iou(&k.bbox, &cand.bbox) <= iou_threshold) {
            kept.push(cand);
        }
    }
    kept
}

/// Scores every proposal, thresholds per foreground class, and applies
/// per-class NMS. Output is sorted by descending score, then class, then
/// proposal index.
pub fn detect(
    params: &DetectorParams,
    scene: &IntegralScene,
    proposals: &[Proposal],
    config: &DetectConfig,
) -> Vec<Detection> {
    let classes = params.num_classes();
    let mut per_class: Vec<Vec<Detection>> = vec![Vec::new(); classes];
    let mut features = vec![0.0; roi_feature_dim(scene.feature_dim())];
    let (w, h) = (scene.width() as f64, scene.height() as f64);
    for (idx, proposal) in proposals.iter().enumerate() {
        roi_features(scene, &proposal.bbox, &mut features);
        let out = forward_features(params, &features);
        let probs = softmax(&out.logits);
        if probs[1..].iter().all(|p| *p < config.score_threshold) {
            continue;
        }
        let Some(bbox) = decode(&out.offsets, &proposal.bbox).clamp_to(w, h) else {
            continue;
        };
        for (c, &p) in probs.iter().enumerate().skip(1) {
            if p >= config.score_threshold {
                per_class[c].push(Detection {
                    class_index: c,
                    score: p,
                    bbox,
                    proposal_index: idx,
                });
            }
        }
    }

    let mut out = Vec::new();
    for mut cands in per_class.into_iter().skip(1) {
        cands.sort_by(rank);
        cands.truncate(config.pre_nms_top_k);
        out.extend(nms(&cands, config.nms_iou));
    }
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then(a.class_index.cmp(&b.class_index))
            .then(a.proposal_index.cmp(&b.proposal_index))
    });
    out.truncate(config.max_detections);
    out
}
