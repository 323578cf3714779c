//! Detection metrics: all-points average precision at a fixed IoU, its mean
//! over classes, and pseudo-label quality against ground truth.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::detector::Annotation;
use crate::geometry::BoundingBox;
pub use crate::geometry::iou;

/// IoU used for AP and pseudo-label matching.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub scene_id: usize,
    pub class_index: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragePrecision {
    pub value: f64,
    pub num_ground_truth: usize,
}

impl AveragePrecision {
    /// AP of a class without ground truth is reported as 0 and flagged here.
    pub fn missing_ground_truth(&self) -> bool {
        self.num_ground_truth == 0
    }
}

/// Indices of `records` in descending score order; ties keep scene order,
/// then input order.
fn ranked(records: &[&DetectionRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .score
            .partial_cmp(&records[a].score)
            .unwrap_or(Ordering::Equal)
            .then(records[a].scene_id.cmp(&records[b].scene_id))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy matching in rank order. Returns one true/false-positive flag per
/// ranked detection.
fn match_ranked(
    dets: &[&DetectionRecord],
    order: &[usize],
    ground_truth: &[Vec<Annotation>],
    class_index: usize,
    iou_threshold: f64,
) -> Vec<bool> {
    let mut used: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    order
        .iter()
        .map(|&i| {
            let d = dets[i];
            let Some(gts) = ground_truth.get(d.scene_id) else {
                return false;
            };
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                if g.class_index != class_index || used[d.scene_id][j] {
                    continue;
                }
                let v = iou(&d.bbox, &g.bbox);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            match best {
                Some((j, _)) => {
                    used[d.scene_id][j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// All-points interpolated AP for one class: area under the monotone
/// precision envelope over recall.
pub fn average_precision(
    detections: &[DetectionRecord],
    ground_truth: &[Vec<Annotation>],
    class_index: usize,
    iou_threshold: f64,
) -> AveragePrecision {
    let num_gt = ground_truth
        .iter()
        .flatten()
        .filter(|g| g.class_index == class_index)
        .count();
    if num_gt == 0 {
        return AveragePrecision {
            value: 0.0,
            num_ground_truth: 0,
        };
    }
    let dets: Vec<&DetectionRecord> = detections.iter().filter(|d| d.class_index == class_index).collect();
    let order = ranked(&dets);
    let hits = match_ranked(&dets, &order, ground_truth, class_index, iou_threshold);

    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (k, hit) in hits.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / num_gt as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precision.iter().zip(&recall) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }
    AveragePrecision {
        value: ap,
        num_ground_truth: num_gt,
    }
}

/// Per-class AP for classes `1..=num_classes`.
pub fn per_class_ap(
    detections: &[DetectionRecord],
    ground_truth: &[Vec<Annotation>],
    num_classes: usize,
    iou_threshold: f64,
) -> Vec<AveragePrecision> {
    (1..=num_classes)
        .map(|c| average_precision(detections, ground_truth, c, iou_threshold))
        .collect()
}

/// Unweighted mean of per-class AP over classes with at least one ground-truth box.
pub fn mean_ap(
    detections: &[DetectionRecord],
    ground_truth: &[Vec<Annotation>],
    num_classes: usize,
    iou_threshold: f64,
) -> f64 {
    let aps: Vec<f64> = per_class_ap(detections, ground_truth, num_classes, iou_threshold)
        .into_iter()
        .filter(|a| !a.missing_ground_truth())
        .map(|a| a.value)
        .collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelQuality {
    pub total: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub num_ground_truth: usize,
    /// Fraction of matched pseudo-labels whose class equals the matched ground truth.
    pub class_accuracy: f64,
    pub mean_iou: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
}

/// Class-agnostic greedy matching of pseudo-labels to ground truth at IoU >=
/// 0.5, highest score first.
pub fn pseudo_label_quality(pseudo_labels: &[DetectionRecord], ground_truth: &[Vec<Annotation>]) -> PseudoLabelQuality {
    let refs: Vec<&DetectionRecord> = pseudo_labels.iter().collect();
    let order = ranked(&refs);
    let mut used: Vec<Vec<bool>> = ground_truth.iter().map(|g| vec![false; g.len()]).collect();
    let (mut tp, mut correct, mut iou_sum) = (0usize, 0usize, 0.0);
    for &i in &order {
        let d = refs[i];
        let Some(gts) = ground_truth.get(d.scene_id) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if used[d.scene_id][j] {
                continue;
            }
            let v = iou(&d.bbox, &g.bbox);
            if v >= DEFAULT_IOU_THRESHOLD && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, v)) = best {
            used[d.scene_id][j] = true;
            tp += 1;
            iou_sum += v;
            if gts[j].class_index == d.class_index {
                correct += 1;
            }
        }
    }
    let total = pseudo_labels.len();
    let num_gt: usize = ground_truth.iter().map(Vec::len).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    PseudoLabelQuality {
        total,
        true_positives: tp,
        false_positives: total - tp,
        false_negatives: num_gt - tp,
        num_ground_truth: num_gt,
        class_accuracy: ratio(correct, tp),
        mean_iou: if tp == 0 { 0.0 } else { iou_sum / tp as f64 },
        fp_rate: ratio(total - tp, total),
        fn_rate: if num_gt == 0 { 0.0 } else { (num_gt - tp) as f64 / num_gt as f64 },
    }
}
