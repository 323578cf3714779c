use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::{AnchorConfig, DetectConfig, DetectorConfig};
use crate::error::{Error, Result};
use crate::fusion::AlphaSchedule;
use crate::world::WorldConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source_scenes: usize,
    pub target_scenes: usize,
    /// Held-out target scenes used only for AP.
    pub test_scenes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source_scenes: 200,
            target_scenes: 200,
            test_scenes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub phase1_steps: u64,
    pub phase2_steps: u64,
    pub phase3_steps: u64,
    pub lr_initial: f64,
    pub lr_drop_step: u64,
    pub lr_dropped: f64,
    pub aux_learning_rate: f64,
    pub aux_batch_size: usize,
    /// Scenes per minibatch drawn from the source domain.
    pub n_source: usize,
    /// Scenes per minibatch drawn from the target domain.
    pub n_target: usize,
    pub positives_per_scene: usize,
    /// Random negatives scored per scene before keeping the hardest.
    pub negative_candidates: usize,
    pub hard_negative_count: usize,
    pub background_crops_per_scene: usize,
    /// A proposal is positive for its best box at IoU >= this.
    pub positive_iou: f64,
    /// A proposal is background when its best IoU is below this.
    pub negative_iou: f64,
    /// Share of hard-negative candidates drawn from proposals that partly
    /// overlap a box; the rest come from the remaining background.
    pub near_negative_fraction: f64,
    /// Global gradient norm cap for detector SGD.
    pub max_grad_norm: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            phase1_steps: 2800,
            phase2_steps: 20000,
            phase3_steps: 2800,
            lr_initial: 0.2,
            lr_drop_step: 2000,
            lr_dropped: 0.02,
            aux_learning_rate: 0.5,
            aux_batch_size: 32,
            n_source: 2,
            n_target: 2,
            positives_per_scene: 8,
            negative_candidates: 32,
            hard_negative_count: 8,
            background_crops_per_scene: 2,
            positive_iou: 0.5,
            negative_iou: 0.3,
            near_negative_fraction: 0.5,
            max_grad_norm: 3.0,
        }
    }
}

impl TrainingConfig {
    pub fn learning_rate(&self, step: u64) -> f64 {
        if step < self.lr_drop_step {
            self.lr_initial
        } else {
            self.lr_dropped
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustConfig {
    pub epsilon_fn: f64,
    pub epsilon_aux: f64,
    pub cls_cor: bool,
    pub box_r: bool,
    pub fn_cor: bool,
    /// When false the crop classifier is skipped and class correction fuses
    /// against the smoothed noisy label instead.
    pub phase2_enabled: bool,
    /// Start robust retraining from the mining detector instead of a fresh init.
    pub warm_start: bool,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            epsilon_fn: 0.2,
            epsilon_aux: 0.05,
            cls_cor: true,
            box_r: true,
            fn_cor: true,
            phase2_enabled: true,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub pre_nms_top_k: usize,
    pub max_detections: usize,
    /// Match threshold for AP.
    pub iou_threshold: f64,
}

impl EvalConfig {
    pub fn detect_config(&self) -> DetectConfig {
        DetectConfig {
            score_threshold: self.score_threshold,
            nms_iou: self.nms_iou,
            pre_nms_top_k: self.pre_nms_top_k,
            max_detections: self.max_detections,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            score_threshold: 0.05,
            nms_iou: 0.5,
            pre_nms_top_k: 100,
            max_detections: 50,
            iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed of `gen-data` and of single-seed runs.
    pub seed: u64,
    /// Seeds swept by `run` and `ablate`.
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub world: WorldConfig,
    pub anchors: AnchorConfig,
    pub detector: DetectorConfig,
    pub training: TrainingConfig,
    pub alpha: AlphaSchedule,
    pub mining: DetectConfig,
    pub eval: EvalConfig,
    pub robust: RobustConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            seeds: (0..10).collect(),
            data: DataConfig::default(),
            world: WorldConfig::default(),
            anchors: AnchorConfig::default(),
            detector: DetectorConfig {
                hidden_units: Some(32),
                init_scale: 0.2,
                ..DetectorConfig::default()
            },
            training: TrainingConfig::default(),
            alpha: AlphaSchedule {
                alpha_start: 100.0,
                alpha_end: 0.5,
                anneal_steps: 2000,
            },
            mining: DetectConfig {
                score_threshold: 0.8,
                nms_iou: 0.2,
                pre_nms_top_k: 100,
                max_detections: 50,
                },
            eval: EvalConfig::default(),
            robust: RobustConfig::default(),
        }
    }
}

fn unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")))
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.anchors.validate()?;
        self.detector.validate()?;
        self.alpha.validate().map_err(|e| Error::Config(format!("alpha: {e}")))?;
        self.mining.validate().map_err(|e| Error::Config(format!("mining: {e}")))?;
        self.eval.detect_config().validate().map_err(|e| Error::Config(format!("eval: {e}")))?;
        unit_open("eval.iou_threshold", self.eval.iou_threshold)?;
        unit_open("robust.epsilon_fn", self.robust.epsilon_fn)?;
        unit_open("robust.epsilon_aux", self.robust.epsilon_aux)?;
        let d = &self.data;
        if d.source_scenes == 0 || d.target_scenes == 0 || d.test_scenes == 0 {
            return Err(Error::Config("data.*_scenes must be positive".into()));
        }
        let t = &self.training;
        for (name, v) in [
            ("training.phase1_steps", t.phase1_steps),
            ("training.phase2_steps", t.phase2_steps),
            ("training.phase3_steps", t.phase3_steps),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("training.lr_initial", t.lr_initial),
            ("training.lr_dropped", t.lr_dropped),
            ("training.aux_learning_rate", t.aux_learning_rate),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if t.n_source + t.n_target == 0 {
            return Err(Error::Config("training.n_source + training.n_target must be positive".into()));
        }
        if t.aux_batch_size == 0 || t.positives_per_scene == 0 {
            return Err(Error::Config(
                "training.aux_batch_size and training.positives_per_scene must be positive".into(),
            ));
        }
        unit_open("training.positive_iou", t.positive_iou)?;
        unit_open("training.negative_iou", t.negative_iou)?;
        if !(t.max_grad_norm > 0.0) {
            return Err(Error::Config(format!(
                "training.max_grad_norm must be positive, got {}",
                t.max_grad_norm
            )));
        }
        if !(0.0..=1.0).contains(&t.near_negative_fraction) {
            return Err(Error::Config(format!(
                "training.near_negative_fraction must lie in [0, 1], got {}",
                t.near_negative_fraction
            )));
        }
        if t.negative_iou > t.positive_iou {
            return Err(Error::Config("training.negative_iou cannot exceed training.positive_iou".into()));
        }
        if t.hard_negative_count > t.negative_candidates {
            return Err(Error::Config(
                "training.hard_negative_count cannot exceed training.negative_candidates".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
