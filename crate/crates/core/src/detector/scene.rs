use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::CategoricalDistribution;
use crate::geometry::BoundingBox;

/// A synthetic image: a `height x width` grid of cells, each holding a
/// feature vector of length `feature_dim`. Cell `(row, col)` covers
/// `[col, col + 1) x [row, row + 1)` in scene units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub feature_dim: usize,
    /// Row-major `height x width x feature_dim`.
    pub features: Vec<f64>,
}

impl Scene {
    pub fn new(width: usize, height: usize, feature_dim: usize, features: Vec<f64>) -> Result<Self> {
        let s = Scene {
            width,
            height,
            feature_dim,
            features,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn zeros(width: usize, height: usize, feature_dim: usize) -> Self {
        Scene {
            width,
            height,
            feature_dim,
            features: vec![0.0; width * height * feature_dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.feature_dim == 0 {
            return Err(Error::Parameter("scene dimensions must be positive".into()));
        }
        let expected = self.width * self.height * self.feature_dim;
        if self.features.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: self.features.len(),
            });
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scene features".into()));
        }
        Ok(())
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.feature_dim;
        &self.features[start..start + self.feature_dim]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.width + col) * self.feature_dim;
        &mut self.features[start..start + self.feature_dim]
    }

    pub fn bounds(&self) -> BoundingBox {
        BoundingBox {
            x: 0.0,
            y: 0.0,
            w: self.width as f64,
            h: self.height as f64,
        }
    }
}

/// One labeled box. `class_index` is `1..=C` for objects and 0 for mined
/// background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_index: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub soft_label: Option<CategoricalDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_target_initial: Option<BoundingBox>,
}

impl Annotation {
    pub fn new(class_index: usize, bbox: BoundingBox) -> Self {
        Annotation {
            class_index,
            bbox,
            soft_label: None,
            box_target_initial: None,
        }
    }
}

/// Half-open range of cell indices whose centers fall in `[lo, hi)`.
fn cell_span(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    let start = (lo - 0.5).ceil().max(0.0);
    let end = (hi - 0.5).ceil().min(n as f64);
    let start = start.min(n as f64) as usize;
    let end = end.max(0.0) as usize;
    (start, end.max(start))
}

/// Mean of the feature vectors of every cell whose center lies inside `bbox`.
/// When no center does, the cell nearest to the box center is used.
pub fn roi_pool(scene: &Scene, bbox: &BoundingBox) -> Result<Vec<f64>> {
    if !(bbox.w > 0.0 && bbox.h > 0.0) {
        return Err(Error::Parameter(format!("zero-area box {bbox:?}")));
    }
    let (c0, c1) = cell_span(bbox.x, bbox.right(), scene.width);
    let (r0, r1) = cell_span(bbox.y, bbox.bottom(), scene.height);
    let mut out = vec![0.0; scene.feature_dim];
    if c1 > c0 && r1 > r0 {
        for r in r0..r1 {
            for c in c0..c1 {
                for (o, v) in out.iter_mut().zip(scene.cell(r, c)) {
                    *o += v;
                }
            }
        }
        let n = ((c1 - c0) * (r1 - r0)) as f64;
        for o in &mut out {
            *o /= n;
        }
    } else {
        let (row, col) = nearest_cell(scene.width, scene.height, bbox);
        out.copy_from_slice(scene.cell(row, col));
    }
    Ok(out)
}

fn nearest_cell(width: usize, height: usize, bbox: &BoundingBox) -> (usize, usize) {
    let (cx, cy) = bbox.center();
    let col = (cx.floor().max(0.0) as usize).min(width - 1);
    let row = (cy.floor().max(0.0) as usize).min(height - 1);
    (row, col)
}

/// Summed-area table over a scene for constant-time box sums.
#[derive(Debug, Clone)]
pub struct IntegralScene {
    width: usize,
    height: usize,
    feature_dim: usize,
    /// `(height + 1) x (width + 1) x feature_dim`.
    sums: Vec<f64>,
}

impl IntegralScene {
    pub fn new(scene: &Scene) -> Self {
        let (w, h, f) = (scene.width, scene.height, scene.feature_dim);
        let stride = (w + 1) * f;
        let mut sums = vec![0.0; (h + 1) * stride];
        for r in 0..h {
            for c in 0..w {
                let cell = scene.cell(r, c);
                for k in 0..f {
                    let v = cell[k] + sums[r * stride + (c + 1) * f + k] + sums[(r + 1) * stride + c * f + k]
                        - sums[r * stride + c * f + k];
                    sums[(r + 1) * stride + (c + 1) * f + k] = v;
                }
            }
        }
        IntegralScene {
            width: w,
            height: h,
            feature_dim: f,
            sums,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Sums cells `rows r0..r1, cols c0..c1` into `out`; returns the cell count.
    fn sum_cells(&self, r0: usize, r1: usize, c0: usize, c1: usize, out: &mut [f64]) -> usize {
        let f = self.feature_dim;
        let stride = (self.width + 1) * f;
        if r1 <= r0 || c1 <= c0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return 0;
        }
        for k in 0..f {
            out[k] = self.sums[r1 * stride + c1 * f + k] - self.sums[r0 * stride + c1 * f + k]
                - self.sums[r1 * stride + c0 * f + k]
                + self.sums[r0 * stride + c0 * f + k];
        }
        (r1 - r0) * (c1 - c0)
    }

    /// Mean over cells with centers in the box; `false` (and zeros) when none.
    pub fn mean_in(&self, x0: f64, y0: f64, x1: f64, y1: f64, out: &mut [f64]) -> bool {
        let (c0, c1) = cell_span(x0, x1, self.width);
        let (r0, r1) = cell_span(y0, y1, self.height);
        let n = self.sum_cells(r0, r1, c0, c1, out);
        if n == 0 {
            return false;
        }
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        true
    }

    /// Same contract as [`roi_pool`].
    pub fn roi_pool(&self, bbox: &BoundingBox, out: &mut [f64]) {
        if !self.mean_in(bbox.x, bbox.y, bbox.right(), bbox.bottom(), out) {
            let (row, col) = nearest_cell(self.width, self.height, bbox);
            self.sum_cells(row, row + 1, col, col + 1, out);
        }
    }
}
