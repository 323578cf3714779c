//! The three phases: mine pseudo-labels with a source-trained detector,
//! rescore them with the crop classifier, and retrain robustly on source
//! ground truth plus the rescored target pseudo-labels.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, TrainingConfig};
use crate::aux::{crop_features, mine_background_boxes, train_aux, AuxTrainConfig, CropSample, Provenance};
use crate::detector::{
    detect, forward_features, generate_proposals, loss_and_gradients, roi_feature_dim, roi_features, Annotation,
    DetectorParams, IntegralScene, Proposal, TrainingInstance,
};
use crate::error::{Error, Result};
use crate::eval::{mean_ap, per_class_ap, pseudo_label_quality, DetectionRecord, PseudoLabelQuality};
use crate::fusion::{
    fuse_box, fuse_categorical, one_hot, softened_one_hot, softmax, AlphaSchedule, CategoricalDistribution,
};
use crate::geometry::{decode, iou, BoundingBox};
use crate::detector::model::validate_soft_label;
use crate::world::{apply_domain_shift, generate_dataset, DomainTag, LabeledDataset};

/// Independent stream seed for `(seed, stream)` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags passed to [`derive_seed`].
pub mod streams {
    pub const SOURCE_DATA: u64 = 1;
    pub const TARGET_DATA: u64 = 2;
    pub const TEST_DATA: u64 = 3;
    pub const PHASE1: u64 = 10;
    pub const PHASE2: u64 = 20;
    pub const PHASE3: u64 = 30;
    pub const ORACLE: u64 = 40;
}

/// Datasets for one seed plus their summed-area tables.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub seed: u64,
    pub source: LabeledDataset,
    pub target: LabeledDataset,
    pub target_test: LabeledDataset,
    pub proposals: Vec<Proposal>,
    pub source_integrals: Vec<IntegralScene>,
    pub target_integrals: Vec<IntegralScene>,
    pub test_integrals: Vec<IntegralScene>,
}

impl SeedData {
    pub fn generate(config: &PipelineConfig, seed: u64) -> Result<Self> {
        let target_world = apply_domain_shift(&config.world);
        let source = generate_dataset(
            &config.world,
            config.data.source_scenes,
            derive_seed(seed, streams::SOURCE_DATA),
            DomainTag::Source,
        )?;
        let target = generate_dataset(
            &target_world,
            config.data.target_scenes,
            derive_seed(seed, streams::TARGET_DATA),
            DomainTag::Target,
        )?;
        let target_test = generate_dataset(
            &target_world,
            config.data.test_scenes,
            derive_seed(seed, streams::TEST_DATA),
            DomainTag::Target,
        )?;
        Ok(Self::from_datasets(config, seed, source, target, target_test))
    }

    pub fn from_datasets(
        config: &PipelineConfig,
        seed: u64,
        source: LabeledDataset,
        target: LabeledDataset,
        target_test: LabeledDataset,
    ) -> Self {
        let integrals = |d: &LabeledDataset| d.scenes.iter().map(IntegralScene::new).collect();
        SeedData {
            seed,
            proposals: generate_proposals(config.world.scene_width, config.world.scene_height, &config.anchors),
            source_integrals: integrals(&source),
            target_integrals: integrals(&target),
            test_integrals: integrals(&target_test),
            source,
            target,
            target_test,
        }
    }
}

/// One mined target box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class_index: usize,
    pub score: f64,
    /// Crop classifier logits, filled in by phase 2.
    pub aux_logits: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub scenes: Vec<Vec<PseudoLabel>>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.scenes.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<DetectionRecord> {
        self.scenes
            .iter()
            .enumerate()
            .flat_map(|(scene_id, labels)| {
                labels.iter().map(move |l| DetectionRecord {
                    scene_id,
                    class_index: l.class_index,
                    score: l.score,
                    bbox: l.bbox,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: u8,
    pub steps: u64,
    pub final_loss: f64,
    pub seconds: f64,
    pub quality: Option<PseudoLabelQuality>,
}

/// Which corrections phase 3 applies to target instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub cls_cor: bool,
    pub box_r: bool,
    pub fn_cor: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        cls_cor: false,
        box_r: false,
        fn_cor: false,
    };
    pub const FULL: Ablation = Ablation {
        cls_cor: true,
        box_r: true,
        fn_cor: true,
    };
}

/// Phase-3 target handling: corrections, their fusion weight, and smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrainOptions {
    pub ablation: Ablation,
    pub alpha: AlphaSchedule,
    pub epsilon_fn: f64,
    pub epsilon_aux: f64,
    pub warm_start: bool,
}

impl RetrainOptions {
    pub fn from_config(config: &PipelineConfig) -> Self {
        RetrainOptions {
            ablation: Ablation {
                cls_cor: config.robust.cls_cor,
                box_r: config.robust.box_r,
                fn_cor: config.robust.fn_cor,
            },
            alpha: config.alpha,
            epsilon_fn: config.robust.epsilon_fn,
            epsilon_aux: config.robust.epsilon_aux,
            warm_start: config.robust.warm_start,
        }
    }
}

/// Negatives overlapping some box at least this much are "near" negatives.
pub const NEAR_NEGATIVE_IOU: f64 = 0.1;

/// Proposal assignment for one scene: `(proposal, box)` positives and
/// negative proposal indices, split by whether they touch a box. Proposals
/// in the IoU gap are ignored.
#[derive(Debug, Clone, Default)]
struct Matching {
    positives: Vec<(usize, usize)>,
    near_negatives: Vec<usize>,
    far_negatives: Vec<usize>,
}

fn match_proposals(proposals: &[Proposal], boxes: &[BoundingBox], positive_iou: f64, negative_iou: f64) -> Matching {
    let mut m = Matching::default();
    for (pi, p) in proposals.iter().enumerate() {
        let mut best = (usize::MAX, 0.0);
        for (bi, b) in boxes.iter().enumerate() {
            let v = iou(&p.bbox, b);
            if v > best.1 {
                best = (bi, v);
            }
        }
        if best.1 >= positive_iou {
            m.positives.push((pi, best.0));
        } else if best.1 >= negative_iou {
            continue;
        } else if best.1 >= NEAR_NEGATIVE_IOU {
            m.near_negatives.push(pi);
        } else {
            m.far_negatives.push(pi);
        }
    }
    m
}

enum Supervision<'a> {
    Labeled(&'a [Annotation]),
    Pseudo(&'a [PseudoLabel]),
}

struct TrainScene<'a> {
    integral: &'a IntegralScene,
    matching: Matching,
    supervision: Supervision<'a>,
}

fn labeled_scenes<'a>(
    integrals: &'a [IntegralScene],
    annotations: &'a [Vec<Annotation>],
    proposals: &[Proposal],
    t: &TrainingConfig,
) -> Vec<TrainScene<'a>> {
    integrals
        .iter()
        .zip(annotations)
        .map(|(integral, anns)| {
            let boxes: Vec<BoundingBox> = anns.iter().map(|a| a.bbox).collect();
            TrainScene {
                integral,
                matching: match_proposals(proposals, &boxes, t.positive_iou, t.negative_iou),
                supervision: Supervision::Labeled(anns),
            }
        })
        .collect()
}

fn pseudo_scenes<'a>(
    integrals: &'a [IntegralScene],
    pseudo: &'a PseudoLabelSet,
    proposals: &[Proposal],
    t: &TrainingConfig,
) -> Vec<TrainScene<'a>> {
    integrals
        .iter()
        .zip(&pseudo.scenes)
        .map(|(integral, labels)| {
            let boxes: Vec<BoundingBox> = labels.iter().map(|l| l.bbox).collect();
            TrainScene {
                integral,
                matching: match_proposals(proposals, &boxes, t.positive_iou, t.negative_iou),
                supervision: Supervision::Pseudo(labels),
            }
        })
        .collect()
}

struct Sampler<'a> {
    config: &'a PipelineConfig,
    proposals: &'a [Proposal],
    feature_dim: usize,
    num_classes: usize,
}

impl Sampler<'_> {
    fn features(&self, scene: &IntegralScene, proposal: usize) -> Vec<f64> {
        let mut f = vec![0.0; roi_feature_dim(self.feature_dim)];
        roi_features(scene, &self.proposals[proposal].bbox, &mut f);
        f
    }

    /// Appends the positives and hard negatives of one scene to `out`.
    #[allow(clippy::too_many_arguments)]
    fn scene_instances<R: Rng + ?Sized>(
        &self,
        params: &DetectorParams,
        scene: &TrainScene<'_>,
        robust: Option<&RetrainOptions>,
        alpha: f64,
        rng: &mut R,
        out: &mut Vec<TrainingInstance>,
    ) -> Result<()> {
        let t = &self.config.training;
        let classes = self.num_classes + 1;
        let pos = &scene.matching.positives;
        for k in sample(rng, pos.len(), t.positives_per_scene.min(pos.len())) {
            let (pi, bi) = pos[k];
            let proposal = self.proposals[pi].bbox;
            let features = self.features(scene.integral, pi);
            let (soft_label, box_target) = match &scene.supervision {
                Supervision::Labeled(anns) => (one_hot(anns[bi].class_index, classes), anns[bi].bbox),
                Supervision::Pseudo(labels) => {
                    let label = &labels[bi];
                    let opts = robust.expect("pseudo-labeled scenes are only trained in phase 3");
                    let live = forward_features(params, &features);
                    let soft = if opts.ablation.cls_cor {
                        let model = CategoricalDistribution::from_logits(live.logits.clone())?;
                        let auxiliary = match &label.aux_logits {
                            Some(l) => CategoricalDistribution::from_logits(l.clone())?,
                            None => softened_one_hot(label.class_index, opts.epsilon_aux, self.num_classes)?,
                        };
                        fuse_categorical(&model, &auxiliary, alpha)?.probabilities()
                    } else {
                        one_hot(label.class_index, classes)
                    };
                    let target = if opts.ablation.box_r {
                        fuse_box(&decode(&live.offsets, &proposal), &label.bbox, alpha)?
                    } else {
                        label.bbox
                    };
                    (soft, target)
                }
            };
            validate_soft_label(&soft_label, classes)?;
            box_target.validate()?;
            out.push(TrainingInstance {
                features,
                proposal,
                soft_label,
                box_target: Some(box_target),
            });
        }

        let (near, far) = (&scene.matching.near_negatives, &scene.matching.far_negatives);
        let near_take = ((t.negative_candidates as f64 * t.near_negative_fraction).round() as usize).min(near.len());
        let far_take = (t.negative_candidates - near_take).min(far.len());
        let picked: Vec<usize> = sample(rng, near.len(), near_take)
            .into_iter()
            .map(|k| near[k])
            .chain(sample(rng, far.len(), far_take).into_iter().map(|k| far[k]))
            .collect();
        let mut scored: Vec<(f64, usize, Vec<f64>)> = picked
            .into_iter()
            .map(|pi| {
                let features = self.features(scene.integral, pi);
                let p = softmax(&forward_features(params, &features).logits);
                (1.0 - p[0], pi, features)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let negative_label = match (&scene.supervision, robust) {
            (Supervision::Pseudo(_), Some(opts)) if opts.ablation.fn_cor => {
                softened_one_hot(0, opts.epsilon_fn, self.num_classes)?.probabilities()
            }
            _ => one_hot(0, classes),
        };
        for (_, pi, features) in scored.into_iter().take(t.hard_negative_count) {
            out.push(TrainingInstance {
                features,
                proposal: self.proposals[pi].bbox,
                soft_label: negative_label.clone(),
                box_target: None,
            });
        }
        Ok(())
    }
}

/// SGD over minibatches of `n_source` source scenes and `n_target` target
/// scenes. With no target scenes every slot is filled from `source`.
#[allow(clippy::too_many_arguments)]
fn train_detector<R: Rng + ?Sized>(
    mut params: DetectorParams,
    config: &PipelineConfig,
    proposals: &[Proposal],
    source: &[TrainScene<'_>],
    target: &[TrainScene<'_>],
    steps: u64,
    robust: Option<&RetrainOptions>,
    rng: &mut R,
) -> Result<(DetectorParams, f64)> {
    let t = &config.training;
    let sampler = Sampler {
        config,
        proposals,
        feature_dim: config.world.feature_dim,
        num_classes: config.world.num_classes,
    };
    let (n_src, n_tgt) = if target.is_empty() {
        (t.n_source + t.n_target, 0)
    } else {
        (t.n_source, t.n_target)
    };
    let tail = steps.min(100);
    let mut tail_loss = 0.0;
    let mut batch = Vec::new();
    for step in 0..steps {
        let alpha = robust.map_or(0.0, |o| o.alpha.alpha_at(step));
        batch.clear();
        for _ in 0..n_src {
            let scene = &source[rng.random_range(0..source.len())];
            sampler.scene_instances(&params, scene, None, alpha, rng, &mut batch)?;
        }
        for _ in 0..n_tgt {
            let scene = &target[rng.random_range(0..target.len())];
            sampler.scene_instances(&params, scene, robust, alpha, rng, &mut batch)?;
        }
        let (loss, mut grads) = loss_and_gradients(&params, &batch, config.detector.lambda_reg)
            .map_err(|e| Error::NonFinite(format!("step {step}: {e}")))?;
        let norm = grads
            .matrices()
            .iter()
            .flat_map(|m| m.as_slice())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm > t.max_grad_norm {
            let shrink = t.max_grad_norm / norm;
            for m in grads.matrices_mut() {
                m.scale(shrink);
            }
        }
        params.sgd_step(&grads, t.learning_rate(step));
        if !params.is_finite() {
            return Err(Error::NonFinite(format!(
                "parameters diverged at step {step} (loss {loss}, alpha {alpha})"
            )));
        }
        if step >= steps - tail {
            tail_loss += loss / tail as f64;
        }
    }
    Ok((params, tail_loss))
}

fn fresh_params(config: &PipelineConfig, rng: &mut ChaCha8Rng) -> DetectorParams {
    DetectorParams::init(config.world.feature_dim, config.world.num_classes, &config.detector, rng)
}

/// Trains a detector with hard labels on a labeled dataset.
fn train_supervised(
    config: &PipelineConfig,
    proposals: &[Proposal],
    integrals: &[IntegralScene],
    annotations: &[Vec<Annotation>],
    stream_seed: u64,
) -> Result<(DetectorParams, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let init = fresh_params(config, &mut rng);
    let scenes = labeled_scenes(integrals, annotations, proposals, &config.training);
    train_detector(init, config, proposals, &scenes, &[], config.training.phase1_steps, None, &mut rng)
}

/// Runs `detect` on every scene and collects `(class, score, box)` per scene.
pub fn mine(
    params: &DetectorParams,
    integrals: &[IntegralScene],
    proposals: &[Proposal],
    config: &crate::detector::DetectConfig,
) -> PseudoLabelSet {
    PseudoLabelSet {
        scenes: integrals
            .iter()
            .map(|s| {
                detect(params, s, proposals, config)
                    .into_iter()
                    .map(|d| PseudoLabel {
                        bbox: d.bbox,
                        class_index: d.class_index,
                        score: d.score,
                        aux_logits: None,
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Phase 1: source-only training, then mining on the target scenes.
pub fn phase1_mine(config: &PipelineConfig, data: &SeedData) -> Result<(DetectorParams, PseudoLabelSet, PhaseReport)> {
    let started = Instant::now();
    let (params, final_loss) = train_supervised(
        config,
        &data.proposals,
        &data.source_integrals,
        &data.source.annotations,
        derive_seed(data.seed, streams::PHASE1),
    )?;
    let pseudo = mine(&params, &data.target_integrals, &data.proposals, &config.mining);
    if pseudo.is_empty() {
        log::warn!("seed {}: phase 1 mined no pseudo-labels; retraining degenerates to source-only", data.seed);
    }
    let quality = pseudo_label_quality(&pseudo.records(), &data.target.annotations);
    Ok((
        params,
        pseudo,
        PhaseReport {
            phase: 1,
            steps: config.training.phase1_steps,
            final_loss,
            seconds: started.elapsed().as_secs_f64(),
            quality: Some(quality),
        },
    ))
}

/// Builds crop samples, trains the crop classifier, and writes its logits
/// into every pseudo-label. With phase 2 disabled the set is returned as is.
pub fn phase2_rescore(
    pseudo: &PseudoLabelSet,
    config: &PipelineConfig,
    data: &SeedData,
) -> Result<(PseudoLabelSet, PhaseReport)> {
    let started = Instant::now();
    let mut out = pseudo.clone();
    if !config.robust.phase2_enabled {
        for label in out.scenes.iter_mut().flatten() {
            label.aux_logits = None;
        }
        return Ok((
            out,
            PhaseReport {
                phase: 2,
                steps: 0,
                final_loss: 0.0,
                seconds: 0.0,
                quality: None,
            },
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(data.seed, streams::PHASE2));
    let w = config.world.scene_width;
    let h = config.world.scene_height;
    let size_range = [
        config.world.object_size_range[0].round() as usize,
        config.world.object_size_range[1].round() as usize,
    ];
    let per_scene = config.training.background_crops_per_scene;

    let mut source_crops = Vec::new();
    for (integral, anns) in data.source_integrals.iter().zip(&data.source.annotations) {
        for a in anns {
            source_crops.push(CropSample {
                pooled_features: crop_features(integral, &a.bbox),
                label: a.class_index,
                provenance: Provenance::SourceClean,
            });
        }
        let known: Vec<BoundingBox> = anns.iter().map(|a| a.bbox).collect();
        for b in mine_background_boxes(w, h, &known, per_scene, size_range, &mut rng) {
            source_crops.push(CropSample {
                pooled_features: crop_features(integral, &b),
                label: 0,
                provenance: Provenance::MinedBackground,
            });
        }
    }
    let mut target_crops = Vec::new();
    for (integral, labels) in data.target_integrals.iter().zip(&pseudo.scenes) {
        for l in labels {
            target_crops.push(CropSample {
                pooled_features: crop_features(integral, &l.bbox),
                label: l.class_index,
                provenance: Provenance::TargetNoisy,
            });
        }
        let known: Vec<BoundingBox> = labels.iter().map(|l| l.bbox).collect();
        for b in mine_background_boxes(w, h, &known, per_scene, size_range, &mut rng) {
            target_crops.push(CropSample {
                pooled_features: crop_features(integral, &b),
                label: 0,
                provenance: Provenance::MinedBackground,
            });
        }
    }

    let aux_cfg = AuxTrainConfig::with_default_schedule(
        config.training.phase2_steps,
        config.training.aux_learning_rate,
        config.training.aux_batch_size,
        config.robust.epsilon_aux,
    );
    let aux = train_aux(&source_crops, &target_crops, config.world.num_classes, &aux_cfg, &mut rng)?;
    for (integral, labels) in data.target_integrals.iter().zip(out.scenes.iter_mut()) {
        for l in labels.iter_mut() {
            l.aux_logits = Some(aux.logits(&crop_features(integral, &l.bbox)));
        }
    }
    Ok((
        out,
        PhaseReport {
            phase: 2,
            steps: config.training.phase2_steps,
            final_loss: 0.0,
            seconds: started.elapsed().as_secs_f64(),
            quality: None,
        },
    ))
}

/// Phase 3: retraining on source ground truth and target pseudo-labels with
/// the corrections selected in `options`.
pub fn phase3_robust_retrain(
    pseudo: &PseudoLabelSet,
    config: &PipelineConfig,
    data: &SeedData,
    options: &RetrainOptions,
    warm_init: Option<&DetectorParams>,
) -> Result<(DetectorParams, PhaseReport)> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(data.seed, streams::PHASE3));
    let fresh = fresh_params(config, &mut rng);
    let init = match (options.warm_start, warm_init) {
        (true, Some(p)) => p.clone(),
        (true, None) => {
            return Err(Error::Config("robust.warm_start needs the phase-1 detector".into()));
        }
        _ => fresh,
    };
    let source = labeled_scenes(&data.source_integrals, &data.source.annotations, &data.proposals, &config.training);
    let target = pseudo_scenes(&data.target_integrals, pseudo, &data.proposals, &config.training);
    let (params, final_loss) = train_detector(
        init,
        config,
        &data.proposals,
        &source,
        &target,
        config.training.phase3_steps,
        Some(options),
        &mut rng,
    )?;
    Ok((
        params,
        PhaseReport {
            phase: 3,
            steps: config.training.phase3_steps,
            final_loss,
            seconds: started.elapsed().as_secs_f64(),
            quality: None,
        },
    ))
}

/// Detector trained on target ground truth: the ceiling for every variant.
pub fn train_oracle(config: &PipelineConfig, data: &SeedData) -> Result<DetectorParams> {
    train_supervised(
        config,
        &data.proposals,
        &data.target_integrals,
        &data.target.annotations,
        derive_seed(data.seed, streams::ORACLE),
    )
    .map(|(p, _)| p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub map: f64,
    pub per_class: Vec<f64>,
}

/// mAP of `params` on the held-out target scenes.
pub fn evaluate(params: &DetectorParams, config: &PipelineConfig, data: &SeedData) -> Evaluation {
    let detect_cfg = config.eval.detect_config();
    let records: Vec<DetectionRecord> = data
        .test_integrals
        .iter()
        .enumerate()
        .flat_map(|(scene_id, s)| {
            detect(params, s, &data.proposals, &detect_cfg)
                .into_iter()
                .map(move |d| DetectionRecord {
                    scene_id,
                    class_index: d.class_index,
                    score: d.score,
                    bbox: d.bbox,
                })
        })
        .collect();
    let gt = &data.target_test.annotations;
    let c = config.world.num_classes;
    Evaluation {
        map: mean_ap(&records, gt, c, config.eval.iou_threshold),
        per_class: per_class_ap(&records, gt, c, config.eval.iou_threshold)
            .into_iter()
            .map(|a| a.value)
            .collect(),
    }
}
