//! Reference implementations shared by the integration tests.

#![allow(dead_code)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustdet::detector::{
    loss_and_gradients, roi_feature_dim, Annotation, DetectorConfig, DetectorParams, TrainingInstance,
};
use robustdet::eval::DetectionRecord;
use robustdet::fusion::softmax;
use robustdet::geometry::{iou, BoundingBox};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-5;

fn random_instance(rng: &mut ChaCha8Rng, input_dim: usize, classes: usize) -> TrainingInstance {
    let features = (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let logits: Vec<f64> = (0..classes).map(|_| rng.random_range(-3.0..3.0)).collect();
    let proposal = BoundingBox::new(
        rng.random_range(0.0..10.0),
        rng.random_range(0.0..10.0),
        rng.random_range(2.0..8.0),
        rng.random_range(2.0..8.0),
    )
    .unwrap();
    let box_target = rng.random_bool(0.6).then(|| {
        BoundingBox::new(
            proposal.x + rng.random_range(-1.0..1.0),
            proposal.y + rng.random_range(-1.0..1.0),
            proposal.w * rng.random_range(0.7..1.4),
            proposal.h * rng.random_range(0.7..1.4),
        )
        .unwrap()
    });
    TrainingInstance {
        features,
        proposal,
        soft_label: softmax(&logits),
        box_target,
    }
}

/// Largest `|analytic - numeric| / max(1, |analytic|)` over every weight.
fn worst_relative_error(params: &DetectorParams, batch: &[TrainingInstance], lambda_reg: f64) -> f64 {
    let (_, grads) = loss_and_gradients(params, batch, lambda_reg).unwrap();
    let analytic: Vec<f64> = grads.matrices().iter().flat_map(|m| m.as_slice().to_vec()).collect();
    let mut probe = params.clone();
    let mut worst: f64 = 0.0;
    let mut flat = 0;
    for m in 0..params.matrices().len() {
        for i in 0..params.matrices()[m].as_slice().len() {
            let original = probe.matrices()[m].as_slice()[i];
            probe.matrices_mut()[m].as_mut_slice()[i] = original + FD_STEP;
            let (up, _) = loss_and_gradients(&probe, batch, lambda_reg).unwrap();
            probe.matrices_mut()[m].as_mut_slice()[i] = original - FD_STEP;
            let (down, _) = loss_and_gradients(&probe, batch, lambda_reg).unwrap();
            probe.matrices_mut()[m].as_mut_slice()[i] = original;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let g = analytic[flat];
            worst = worst.max((g - numeric).abs() / g.abs().max(1.0));
            flat += 1;
        }
    }
    worst
}

/// Worst finite-difference disagreement over `draws` random parameter sets
/// and batches mixing soft class targets with box targets.
pub fn gradient_check(hidden_units: Option<usize>, draws: u64) -> f64 {
    let feature_dim = 2;
    let classes = 3;
    let config = DetectorConfig {
        hidden_units,
        init_scale: 0.5,
        ..DetectorConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = DetectorParams::init(feature_dim, classes, &config, &mut rng);
        let batch: Vec<TrainingInstance> = (0..4)
            .map(|_| random_instance(&mut rng, roi_feature_dim(feature_dim), classes + 1))
            .collect();
        let lambda_reg = rng.random_range(0.5..2.0);
        worst = worst.max(worst_relative_error(&params, &batch, lambda_reg));
    }
    worst
}

pub const AP_IOU: f64 = 0.5;

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ratio(pub u128, pub u128);

impl Ratio {
    fn add(self, o: Ratio) -> Ratio {
        let (n, d) = (self.0 * o.1 + o.0 * self.1, self.1 * o.1);
        let g = gcd(n, d).max(1);
        Ratio(n / g, d / g)
    }

    fn max(self, o: Ratio) -> Ratio {
        if self.0 * o.1 >= o.0 * self.1 {
            self
        } else {
            o
        }
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

/// AP by definition: every ground truth recovered contributes
/// `1/num_gt` times the best precision reached at that recall or beyond.
pub fn reference_ap(dets: &[DetectionRecord], gt: &[Vec<Annotation>], class: usize) -> Ratio {
    let num_gt = gt.iter().flatten().filter(|g| g.class_index == class).count() as u128;
    if num_gt == 0 {
        return Ratio(0, 1);
    }
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class_index == class).collect();
    // stable: equal scores keep scene order, then input order
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(dets[a].scene_id.cmp(&dets[b].scene_id))
    });
    let mut taken: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    let mut hits = Vec::new();
    for &i in &order {
        let d = &dets[i];
        let mut best: Option<usize> = None;
        for (j, g) in gt[d.scene_id].iter().enumerate() {
            let ok = g.class_index == class && !taken[d.scene_id][j] && iou(&d.bbox, &g.bbox) >= AP_IOU;
            if ok && best.is_none_or(|b| iou(&d.bbox, &g.bbox) > iou(&d.bbox, &gt[d.scene_id][b].bbox)) {
                best = Some(j);
            }
        }
        if let Some(j) = best {
            taken[d.scene_id][j] = true;
        }
        hits.push(best.is_some());
    }
    let precision: Vec<Ratio> = (0..hits.len())
        .map(|k| Ratio(hits[..=k].iter().filter(|h| **h).count() as u128, k as u128 + 1))
        .collect();
    let mut ap = Ratio(0, 1);
    for k in 0..hits.len() {
        if hits[k] {
            let envelope = precision[k..].iter().fold(Ratio(0, 1), |m, p| m.max(*p));
            ap = ap.add(Ratio(envelope.0, envelope.1 * num_gt));
        }
    }
    ap
}

pub type Fixture = (Vec<DetectionRecord>, Vec<Vec<Annotation>>);

fn snapped_box(x: u8, y: u8, w: u8, h: u8) -> BoundingBox {
    BoundingBox::new(f64::from(x), f64::from(y), f64::from(w) + 1.0, f64::from(h) + 1.0).unwrap()
}

/// Two classes, one or two scenes, boxes on a coarse lattice so that
/// detections often hit ground truth, and coarse scores so that ties occur.
pub fn arb_fixture(max_dets: usize) -> impl Strategy<Value = Fixture> {
    let gt_scene = prop::collection::vec((1usize..=2, 0u8..4, 0u8..4, 1u8..4, 1u8..4), 0..=3);
    let gts = prop::collection::vec(gt_scene, 1..=2);
    gts.prop_flat_map(move |gts| {
        let scenes = gts.len();
        let dets = prop::collection::vec((0..scenes, 1usize..=2, 1u8..=20, 0u8..4, 0u8..4, 1u8..4, 1u8..4), 0..=max_dets);
        (Just(gts), dets)
    })
    .prop_map(|(gts, dets)| {
        let gt = gts
            .into_iter()
            .map(|s| s.into_iter().map(|(c, x, y, w, h)| Annotation::new(c, snapped_box(x, y, w, h))).collect())
            .collect();
        let dets = dets
            .into_iter()
            .map(|(scene_id, class_index, s, x, y, w, h)| DetectionRecord {
                scene_id,
                class_index,
                score: f64::from(s) / 20.0,
                bbox: snapped_box(x, y, w, h),
            })
            .collect();
        (dets, gt)
    })
}

/// Strictly increasing maps of (0, 1] scores.
pub const MONOTONE_TRANSFORMS: [fn(f64) -> f64; 3] = [
    |s| s * s * s,
    |s| (s + 0.5).ln() + 1.0,
    |s| 1.0 / (1.0 + (-8.0 * (s - 0.5)).exp()),
];
