//! Region features for the detector heads: a 2x2 grid of mean-pooled bins
//! over the region plus two rings of context bands outside its sides, a
//! thin one touching the region and a wider one beyond it.

use crate::detector::scene::IntegralScene;
use crate::geometry::BoundingBox;

/// Number of pooled blocks per region (4 bins + 2 rings of 4 bands).
pub const BLOCKS: usize = 12;

/// Inner band thickness as a fraction of the region side, at least one cell.
const CONTEXT_FRACTION: f64 = 0.25;
/// Outer band thickness, same convention.
const FAR_CONTEXT_FRACTION: f64 = 0.5;

pub fn roi_feature_dim(feature_dim: usize) -> usize {
    BLOCKS * feature_dim
}

/// Writes the `12 * F` region descriptor of `bbox` into `out`.
///
/// Bins that contain no cell center fall back to the nearest cell; context
/// bands that leave the scene are zero.
pub fn roi_features(scene: &IntegralScene, bbox: &BoundingBox, out: &mut [f64]) {
    let f = scene.feature_dim();
    debug_assert_eq!(out.len(), BLOCKS * f);
    let (cx, cy) = bbox.center();
    let (x0, y0, x1, y1) = (bbox.x, bbox.y, bbox.right(), bbox.bottom());
    let bins = [
        (x0, y0, cx, cy),
        (cx, y0, x1, cy),
        (x0, cy, cx, y1),
        (cx, cy, x1, y1),
    ];
    for (i, (bx0, by0, bx1, by1)) in bins.into_iter().enumerate() {
        let slot = &mut out[i * f..(i + 1) * f];
        let sub = BoundingBox {
            x: bx0,
            y: by0,
            w: bx1 - bx0,
            h: by1 - by0,
        };
        scene.roi_pool(&sub, slot);
    }
    let mx = (CONTEXT_FRACTION * bbox.w).max(1.0);
    let my = (CONTEXT_FRACTION * bbox.h).max(1.0);
    let fx = (FAR_CONTEXT_FRACTION * bbox.w).max(1.0);
    let fy = (FAR_CONTEXT_FRACTION * bbox.h).max(1.0);
    let bands = [
        (x0 - mx, y0, x0, y1),
        (x1, y0, x1 + mx, y1),
        (x0, y0 - my, x1, y0),
        (x0, y1, x1, y1 + my),
        (x0 - mx - fx, y0, x0 - mx, y1),
        (x1 + mx, y0, x1 + mx + fx, y1),
        (x0, y0 - my - fy, x1, y0 - my),
        (x0, y1 + my, x1, y1 + my + fy),
    ];
    for (i, (bx0, by0, bx1, by1)) in bands.into_iter().enumerate() {
        let slot = &mut out[(4 + i) * f..(5 + i) * f];
        scene.mean_in(bx0, by0, bx1, by1, slot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::scene::Scene;

    #[test]
    fn object_inside_box_lights_bins_not_context() {
        let mut s = Scene::zeros(12, 12, 1);
        for r in 4..8 {
            for c in 4..8 {
                s.cell_mut(r, c)[0] = 1.0;
            }
        }
        let integral = IntegralScene::new(&s);
        let mut out = vec![0.0; roi_feature_dim(1)];
        roi_features(&integral, &BoundingBox::new(4.0, 4.0, 4.0, 4.0).unwrap(), &mut out);
        assert_eq!(out, [[1.0; 4], [0.0; 4], [0.0; 4]].concat());

        // shifted left by two cells: the right bands now see the object,
        // the outer one only half of it
        roi_features(&integral, &BoundingBox::new(2.0, 4.0, 4.0, 4.0).unwrap(), &mut out);
        assert_eq!(
            out,
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0]
        );
    }

    #[test]
    fn bands_outside_the_scene_are_zero() {
        let mut s = Scene::zeros(4, 4, 1);
        s.features.iter_mut().for_each(|v| *v = 2.0);
        let integral = IntegralScene::new(&s);
        let mut out = vec![9.0; roi_feature_dim(1)];
        roi_features(&integral, &s.bounds(), &mut out);
        assert_eq!(out, [[2.0; 4], [0.0; 4], [0.0; 4]].concat());
    }
}
