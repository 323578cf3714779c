use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Fixed anchor grid: one anchor per (position, scale, ratio). Positions are
/// the centers of a `stride`-spaced grid; an anchor of scale `s` and ratio `r`
/// has width `s * sqrt(r)` and height `s / sqrt(r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    pub stride: usize,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            stride: 2,
            scales: vec![4.5, 6.5, 9.0],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("anchors.stride must be positive".into()));
        }
        if self.scales.is_empty() || self.ratios.is_empty() {
            return Err(Error::Config("anchors.scales and anchors.ratios must be non-empty".into()));
        }
        if self.scales.iter().chain(&self.ratios).any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("anchor scales and ratios must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalSource {
    Anchor,
    Mined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub bbox: BoundingBox,
    pub source: ProposalSource,
}

/// All anchors for a `width x height` scene, clamped to the scene.
/// Count is `ceil(H / stride) * ceil(W / stride) * |scales| * |ratios|`.
pub fn generate_proposals(width: usize, height: usize, config: &AnchorConfig) -> Vec<Proposal> {
    let s = config.stride;
    let rows = height.div_ceil(s);
    let cols = width.div_ceil(s);
    let mut out = Vec::with_capacity(rows * cols * config.scales.len() * config.ratios.len());
    for r in 0..rows {
        for c in 0..cols {
            let cx = (c as f64 + 0.5) * s as f64;
            let cy = (r as f64 + 0.5) * s as f64;
            // a center past the scene edge (non-divisible sizes) is pulled inside
            let cx = cx.min(width as f64 - 0.5);
            let cy = cy.min(height as f64 - 0.5);
            for &scale in &config.scales {
                for &ratio in &config.ratios {
                    let root = ratio.sqrt();
                    let anchor = BoundingBox::from_center(cx, cy, scale * root, scale / root);
                    let bbox = anchor
                        .clamp_to(width as f64, height as f64)
                        .expect("anchor centers lie inside the scene");
                    out.push(Proposal {
                        bbox,
                        source: ProposalSource::Anchor,
                    });
                }
            }
        }
    }
    out
}
