//! Axis-aligned boxes in scene units, overlap, and the center/log-size offset
//! parameterization used by the box regression head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box: top-left corner plus width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = BoundingBox { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()) {
            return Err(Error::NonFinite(format!("box {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::Parameter(format!(
                "box width and height must be positive, got w={} h={}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BoundingBox {
            x: cx - 0.5 * w,
            y: cy - 0.5 * h,
            w,
            h,
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoundingBox {
            x: a[0],
            y: a[1],
            w: a[2],
            h: a[3],
        }
    }

    /// Intersects the box with `[0, width] x [0, height]`. Returns `None` when
    /// nothing of positive area remains.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BoundingBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        if x1 - x0 > 0.0 && y1 - y0 > 0.0 {
            Some(BoundingBox {
                x: x0,
                y: y0,
                w: x1 - x0,
                h: y1 - y0,
            })
        } else {
            None
        }
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn expand(&self, margin: f64) -> BoundingBox {
        BoundingBox {
            x: self.x - margin,
            y: self.y - margin,
            w: self.w + 2.0 * margin,
            h: self.h + 2.0 * margin,
        }
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Regression offsets of `target` relative to `reference`:
/// `(dx, dy)` center shift in units of the reference size, `(dw, dh)` log size ratio.
pub fn encode(target: &BoundingBox, reference: &BoundingBox) -> [f64; 4] {
    let (tcx, tcy) = target.center();
    let (rcx, rcy) = reference.center();
    [
        (tcx - rcx) / reference.w,
        (tcy - rcy) / reference.h,
        (target.w / reference.w).ln(),
        (target.h / reference.h).ln(),
    ]
}

/// Inverse of [`encode`]. Width and height are always positive.
pub fn decode(offsets: &[f64; 4], reference: &BoundingBox) -> BoundingBox {
    let (rcx, rcy) = reference.center();
    // exp of a huge offset would overflow; 10 is already e^10 times the anchor
    let dw = offsets[2].clamp(-10.0, 10.0);
    let dh = offsets[3].clamp(-10.0, 10.0);
    BoundingBox::from_center(
        rcx + offsets[0] * reference.w,
        rcy + offsets[1] * reference.h,
        reference.w * dw.exp(),
        reference.h * dh.exp(),
    )
}
