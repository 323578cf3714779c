//! Paired source/target synthetic detection datasets with a controllable
//! domain shift.
//!
//! A scene is a grid of feature vectors. Background cells are zero-mean
//! noise; each object is a rectangle whose cells hold its class prototype
//! plus per-cell appearance noise. The target domain moves every prototype,
//! adds appearance noise, and rescales object sizes.

pub mod io;

pub use io::{load_dataset, save_dataset, FORMAT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detector::{Annotation, Scene};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

/// Maximum pairwise IoU between ground-truth objects in one scene.
pub const MAX_OBJECT_OVERLAP: f64 = 0.3;
/// Placement attempts per object before giving up on it.
pub const PLACEMENT_TRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PrototypeShift {
    /// Move each prototype by this L2 distance along a seeded random direction.
    Magnitude(f64),
    /// Explicit per-class displacement vectors.
    Vectors(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainShift {
    pub prototype_shift: PrototypeShift,
    /// Seed of the shift directions when `prototype_shift` is a magnitude.
    #[serde(default)]
    pub direction_seed: u64,
    pub extra_noise: f64,
    pub size_scale: f64,
}

impl DomainShift {
    pub fn none() -> Self {
        DomainShift {
            prototype_shift: PrototypeShift::Magnitude(0.0),
            direction_seed: 0,
            extra_noise: 0.0,
            size_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub scene_width: usize,
    pub scene_height: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Inclusive range of objects per scene.
    pub objects_per_scene: [usize; 2],
    pub class_prototypes: Vec<Vec<f64>>,
    pub appearance_noise: f64,
    pub background_level: f64,
    /// Inclusive range of object side lengths, in cells.
    pub object_size_range: [f64; 2],
    pub domain_shift: DomainShift,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            scene_width: 32,
            scene_height: 32,
            feature_dim: 8,
            num_classes: 3,
            objects_per_scene: [1, 4],
            class_prototypes: vec![
                vec![1.0, 1.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.5, 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.5, 0.0],
            ],
            appearance_noise: 0.6,
            background_level: 0.4,
            object_size_range: [4.0, 10.0],
            domain_shift: DomainShift {
                prototype_shift: PrototypeShift::Magnitude(0.8),
                direction_seed: 7,
                extra_noise: 0.2,
                size_scale: 0.9,
            },
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scene_width == 0 || self.scene_height == 0 {
            return bad("world.scene_width and world.scene_height must be positive".into());
        }
        if self.feature_dim == 0 || self.num_classes == 0 {
            return bad("world.feature_dim and world.num_classes must be positive".into());
        }
        if self.objects_per_scene[0] > self.objects_per_scene[1] {
            return bad("world.objects_per_scene must be [min, max] with min <= max".into());
        }
        if self.class_prototypes.len() != self.num_classes {
            return bad(format!(
                "world.class_prototypes has {} entries, expected num_classes = {}",
                self.class_prototypes.len(),
                self.num_classes
            ));
        }
        for (i, p) in self.class_prototypes.iter().enumerate() {
            if p.len() != self.feature_dim || p.iter().any(|v| !v.is_finite()) {
                return bad(format!(
                    "world.class_prototypes[{i}] must hold {} finite values",
                    self.feature_dim
                ));
            }
        }
        for i in 0..self.num_classes {
            for j in i + 1..self.num_classes {
                if self.class_prototypes[i] == self.class_prototypes[j] {
                    return bad(format!("world.class_prototypes[{i}] and [{j}] are identical"));
                }
            }
        }
        if !(self.appearance_noise >= 0.0) || !(self.background_level >= 0.0) {
            return bad("world.appearance_noise and world.background_level must be >= 0".into());
        }
        let [lo, hi] = self.object_size_range;
        if !(lo >= 1.0 && lo <= hi) {
            return bad("world.object_size_range must be [min, max] with 1 <= min <= max".into());
        }
        if hi.round() as usize > self.scene_width.min(self.scene_height) {
            return bad("world.object_size_range exceeds the scene size".into());
        }
        let shift = &self.domain_shift;
        if !(shift.extra_noise >= 0.0) || !(shift.size_scale > 0.0) {
            return bad("world.domain_shift.extra_noise must be >= 0 and size_scale > 0".into());
        }
        match &shift.prototype_shift {
            PrototypeShift::Magnitude(m) if !(*m >= 0.0) || !m.is_finite() => {
                return bad("world.domain_shift.prototype_shift must be >= 0".into());
            }
            PrototypeShift::Vectors(v)
                if v.len() != self.num_classes || v.iter().any(|d| d.len() != self.feature_dim) =>
            {
                return bad(format!(
                    "world.domain_shift.prototype_shift needs {} vectors of length {}",
                    self.num_classes, self.feature_dim
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Per-class displacement vectors described by `domain_shift`.
    pub fn shift_vectors(&self) -> Vec<Vec<f64>> {
        match &self.domain_shift.prototype_shift {
            PrototypeShift::Vectors(v) => v.clone(),
            PrototypeShift::Magnitude(m) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.domain_shift.direction_seed);
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                (0..self.num_classes)
                    .map(|_| {
                        let d: Vec<f64> = (0..self.feature_dim).map(|_| normal.sample(&mut rng)).collect();
                        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                        d.into_iter().map(|v| v * m / norm).collect()
                    })
                    .collect()
            }
        }
    }
}

/// Target-domain config: prototypes moved by the shift, appearance noise
/// increased by `extra_noise`, and the size range scaled by `size_scale`.
/// Everything else, including `domain_shift` itself, is copied unchanged.
pub fn apply_domain_shift(config: &WorldConfig) -> WorldConfig {
    let mut out = config.clone();
    let shifts = config.shift_vectors();
    for (proto, delta) in out.class_prototypes.iter_mut().zip(&shifts) {
        for (p, d) in proto.iter_mut().zip(delta) {
            *p += d;
        }
    }
    out.appearance_noise += config.domain_shift.extra_noise;
    let scale = config.domain_shift.size_scale;
    if scale != 1.0 {
        let max_side = config.scene_width.min(config.scene_height) as f64;
        out.object_size_range = [
            (config.object_size_range[0] * scale).max(1.0),
            (config.object_size_range[1] * scale).min(max_side),
        ];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub domain_tag: DomainTag,
    pub seed: u64,
    pub config: WorldConfig,
    pub scenes: Vec<Scene>,
    pub annotations: Vec<Vec<Annotation>>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn num_objects(&self) -> usize {
        self.annotations.iter().map(Vec::len).sum()
    }
}

/// Draws one scene and its ground truth.
pub fn sample_scene<R: Rng + ?Sized>(config: &WorldConfig, rng: &mut R) -> (Scene, Vec<Annotation>) {
    let (w, h, f) = (config.scene_width, config.scene_height, config.feature_dim);
    let mut scene = Scene::zeros(w, h, f);
    if config.background_level > 0.0 {
        let bg = Normal::new(0.0, config.background_level).expect("valid std");
        for v in scene.features.iter_mut() {
            *v = bg.sample(rng);
        }
    }

    let count = rng.random_range(config.objects_per_scene[0]..=config.objects_per_scene[1]);
    let lo = config.object_size_range[0].round().max(1.0) as usize;
    let hi = (config.object_size_range[1].round() as usize).clamp(lo, w.min(h));
    let appearance = (config.appearance_noise > 0.0)
        .then(|| Normal::new(0.0, config.appearance_noise).expect("valid std"));

    let mut annotations: Vec<Annotation> = Vec::with_capacity(count);
    for _ in 0..count {
        let class_index = rng.random_range(1..=config.num_classes);
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let bw = rng.random_range(lo..=hi).min(w);
            let bh = rng.random_range(lo..=hi).min(h);
            let x = rng.random_range(0..=w - bw);
            let y = rng.random_range(0..=h - bh);
            let bbox = BoundingBox {
                x: x as f64,
                y: y as f64,
                w: bw as f64,
                h: bh as f64,
            };
            if annotations.iter().all(|a| iou(&a.bbox, &bbox) < MAX_OBJECT_OVERLAP) {
                placed = Some((x, y, bw, bh, bbox));
                break;
            }
        }
        let Some((x, y, bw, bh, bbox)) = placed else {
            log::debug!("object placement failed after {PLACEMENT_TRIES} tries; scene keeps {} objects", annotations.len());
            continue;
        };
        let proto = &config.class_prototypes[class_index - 1];
        for r in y..y + bh {
            for c in x..x + bw {
                let cell = scene.cell_mut(r, c);
                for (k, v) in cell.iter_mut().enumerate() {
                    *v = proto[k] + appearance.as_ref().map_or(0.0, |n| n.sample(rng));
                }
            }
        }
        annotations.push(Annotation::new(class_index, bbox));
    }
    (scene, annotations)
}

/// `n_scenes` independent scenes from one seeded stream.
pub fn generate_dataset(config: &WorldConfig, n_scenes: usize, seed: u64, domain_tag: DomainTag) -> Result<LabeledDataset> {
    config.validate()?;
    if n_scenes == 0 {
        return Err(Error::Parameter("n_scenes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (scenes, annotations) = (0..n_scenes).map(|_| sample_scene(config, &mut rng)).unzip();
    Ok(LabeledDataset {
        domain_tag,
        seed,
        config: config.clone(),
        scenes,
        annotations,
    })
}
