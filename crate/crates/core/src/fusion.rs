//! KL-regularized fusion of a live model prediction with an auxiliary belief.
//!
//! For categorical beliefs the minimizer of `KL(q || p1) + alpha * KL(q || p2)`
//! is the normalized weighted geometric mean `(p1 * p2^alpha)^(1 / (1 + alpha))`,
//! which in logit space is the weighted mean `(l1 + alpha * l2) / (1 + alpha)`.
//! For two isotropic Normals with a shared covariance the minimizer is Normal
//! with mean `(mu1 + alpha * mu2) / (1 + alpha)`, independent of the covariance.
//!
//! [`crate::oracle`] holds independent numerical minimizers of both objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// A categorical distribution over `C + 1` classes stored as logits.
/// Index 0 is background, `1..=C` are the foreground classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDistribution {
    logits: Vec<f64>,
}

impl CategoricalDistribution {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Dimension {
                expected: 1,
                got: 0,
            });
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("logits {logits:?}")));
        }
        Ok(CategoricalDistribution { logits })
    }

    /// Builds the distribution from strictly positive probabilities.
    pub fn from_probabilities(probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::Parameter(format!(
                "probabilities must be positive and finite, got {probs:?}"
            )));
        }
        Self::from_logits(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn uniform(num_classes: usize) -> Self {
        CategoricalDistribution {
            logits: vec![0.0; num_classes],
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn into_logits(self) -> Vec<f64> {
        self.logits
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn log_probabilities(&self) -> Vec<f64> {
        log_softmax(&self.logits)
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Total variation distance: half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension {
            expected: a,
            got: b,
        });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Parameter(format!(
            "alpha must be finite and non-negative, got {alpha}"
        )));
    }
    Ok(())
}

/// `KL(p || q) = sum_k p_k log(p_k / q_k)`, evaluated in log space.
pub fn kl_categorical(p: &CategoricalDistribution, q: &CategoricalDistribution) -> Result<f64> {
    check_same_len(p.len(), q.len())?;
    let lp = p.log_probabilities();
    let lq = q.log_probabilities();
    let kl = lp
        .iter()
        .zip(&lq)
        .map(|(a, b)| {
            let pa = a.exp();
            if pa == 0.0 {
                0.0
            } else {
                pa * (a - b)
            }
        })
        .sum::<f64>();
    Ok(kl.max(0.0))
}

/// Minimizer of `KL(q || model) + alpha * KL(q || auxiliary)`.
///
/// `alpha = 0` returns `model` exactly; as `alpha` grows the result
/// approaches `auxiliary`.
pub fn fuse_categorical(
    model: &CategoricalDistribution,
    auxiliary: &CategoricalDistribution,
    alpha: f64,
) -> Result<CategoricalDistribution> {
    check_same_len(model.len(), auxiliary.len())?;
    check_alpha(alpha)?;
    if alpha == 0.0 {
        return Ok(model.clone());
    }
    let scale = 1.0 / (1.0 + alpha);
    let logits = model
        .logits
        .iter()
        .zip(&auxiliary.logits)
        .map(|(a, b)| (a + alpha * b) * scale)
        .collect();
    Ok(CategoricalDistribution { logits })
}

/// Probability-space form of [`fuse_categorical`]: normalized
/// `(p1 * p2^alpha)^(1 / (alpha + 1))`. Kept as a cross-check path.
pub fn geometric_mean_probabilities(p1: &[f64], p2: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_same_len(p1.len(), p2.len())?;
    check_alpha(alpha)?;
    let expo = 1.0 / (alpha + 1.0);
    let raw: Vec<f64> = p1
        .iter()
        .zip(p2)
        .map(|(a, b)| (a * b.powf(alpha)).powf(expo))
        .collect();
    let z: f64 = raw.iter().sum();
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::NonFinite(format!(
            "geometric mean normalizer {z} for alpha={alpha}"
        )));
    }
    Ok(raw.into_iter().map(|r| r / z).collect())
}

/// Isotropic Normal over box coordinates, covariance `sigma * I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBox {
    pub mean: BoundingBox,
    pub sigma: f64,
}

/// Default scale of the box Normal. The fused mean does not depend on it.
pub const DEFAULT_BOX_SIGMA: f64 = 1.0;

impl GaussianBox {
    pub fn new(mean: BoundingBox, sigma: f64) -> Result<Self> {
        mean.validate()?;
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
        }
        Ok(GaussianBox { mean, sigma })
    }

    /// `KL(self || other)` for two Normals sharing `sigma`.
    pub fn kl(&self, other: &GaussianBox) -> Result<f64> {
        if self.sigma != other.sigma {
            return Err(Error::Parameter(format!(
                "Normal KL requires a shared sigma, got {} and {}",
                self.sigma, other.sigma
            )));
        }
        let a = self.mean.to_array();
        let b = other.mean.to_array();
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(sq / (2.0 * self.sigma))
    }

    /// Weighted geometric mean of two Normals with shared covariance.
    pub fn fuse(&self, initial: &GaussianBox, alpha: f64) -> Result<GaussianBox> {
        if self.sigma != initial.sigma {
            return Err(Error::Parameter("fusion requires a shared sigma".into()));
        }
        Ok(GaussianBox {
            mean: fuse_box(&self.mean, &initial.mean, alpha)?,
            sigma: self.sigma,
        })
    }
}

/// Refined box: each coordinate is `(current + alpha * initial) / (alpha + 1)`.
pub fn fuse_box(current: &BoundingBox, initial: &BoundingBox, alpha: f64) -> Result<BoundingBox> {
    check_alpha(alpha)?;
    current.validate()?;
    initial.validate()?;
    let c = current.to_array();
    let i = initial.to_array();
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (c[k] + alpha * i[k]) / (alpha + 1.0);
    }
    Ok(BoundingBox::from_array(out))
}

/// Label-smoothed target: `1 - epsilon` on `class_index`, `epsilon / C` on
/// each of the other `C` entries.
pub fn softened_one_hot(
    class_index: usize,
    epsilon: f64,
    num_foreground: usize,
) -> Result<CategoricalDistribution> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Parameter(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    if num_foreground == 0 {
        return Err(Error::Parameter("need at least one foreground class".into()));
    }
    if class_index > num_foreground {
        return Err(Error::Parameter(format!(
            "class index {class_index} out of range 0..={num_foreground}"
        )));
    }
    let other = epsilon / num_foreground as f64;
    let probs: Vec<f64> = (0..=num_foreground)
        .map(|k| if k == class_index { 1.0 - epsilon } else { other })
        .collect();
    CategoricalDistribution::from_probabilities(&probs)
}

/// Hard one-hot target as a probability vector.
pub fn one_hot(class_index: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[class_index] = 1.0;
    v
}

/// Piecewise-linear annealing of the fusion weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSchedule {
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub anneal_steps: u64,
}

impl AlphaSchedule {
    pub fn new(alpha_start: f64, alpha_end: f64, anneal_steps: u64) -> Result<Self> {
        let s = AlphaSchedule {
            alpha_start,
            alpha_end,
            anneal_steps,
        };
        s.validate()?;
        Ok(s)
    }

    /// Holds `alpha` fixed for the whole run.
    pub fn constant(alpha: f64) -> Self {
        AlphaSchedule {
            alpha_start: alpha,
            alpha_end: alpha,
            anneal_steps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_start", self.alpha_start), ("alpha_end", self.alpha_end)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.anneal_steps == 0 {
            return Err(Error::Parameter("anneal_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn alpha_at(&self, step: u64) -> f64 {
        if step >= self.anneal_steps {
            return self.alpha_end;
        }
        let t = step as f64 / self.anneal_steps as f64;
        self.alpha_start + (self.alpha_end - self.alpha_start) * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(logits: &[f64]) -> CategoricalDistribution {
        CategoricalDistribution::from_logits(logits.to_vec()).unwrap()
    }

    #[test]
    fn kl_of_identical_uniforms_is_zero() {
        let u = CategoricalDistribution::uniform(3);
        assert_eq!(kl_categorical(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn kl_of_near_one_hot_against_uniform_is_log3() {
        let p = dist(&[800.0, 0.0, 0.0]);
        let q = CategoricalDistribution::uniform(3);
        let kl = kl_categorical(&p, &q).unwrap();
        assert!((kl - 3f64.ln()).abs() < 1e-12, "{kl}");
    }

    #[test]
    fn kl_matches_high_precision_reference() {
        // mpmath, 50 digits: sum_k p_k log(p_k / (1/3)) with p = softmax(0.3, -0.1, 0.5)
        let reference = 0.028_513_035_660_757_323;
        let kl = kl_categorical(&dist(&[0.3, -0.1, 0.5]), &dist(&[0.0, 0.0, 0.0])).unwrap();
        assert!((kl - reference).abs() < 1e-15, "{kl}");
    }

    #[test]
    fn kl_rejects_mismatched_lengths() {
        let err = kl_categorical(&dist(&[0.0, 1.0]), &dist(&[0.0, 1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn fusing_a_distribution_with_itself_is_identity() {
        let p = dist(&[0.4, -1.2, 2.0]);
        for alpha in [0.0, 0.5, 3.0, 1e6] {
            let f = fuse_categorical(&p, &p, alpha).unwrap();
            assert!(tv_distance(&f.probabilities(), &p.probabilities()) < 1e-12);
        }
    }

    #[test]
    fn alpha_zero_returns_model_exactly() {
        let p1 = dist(&[0.4, -1.2, 2.0]);
        let p2 = dist(&[3.0, 0.0, -2.0]);
        assert_eq!(fuse_categorical(&p1, &p2, 0.0).unwrap(), p1);
    }

    #[test]
    fn symmetric_pair_fuses_to_uniform() {
        let f = fuse_categorical(&dist(&[1.0, 0.0]), &dist(&[0.0, 1.0]), 1.0).unwrap();
        let p = f.probabilities();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fuse_rejects_bad_alpha() {
        let p = dist(&[0.0, 1.0]);
        assert!(fuse_categorical(&p, &p, -0.1).is_err());
        assert!(fuse_categorical(&p, &p, f64::NAN).is_err());
        assert!(fuse_categorical(&p, &p, f64::INFINITY).is_err());
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(fuse_box(&b, &b, -1.0).is_err());
    }

    #[test]
    fn fuse_box_fixtures() {
        let b = |x, y, w, h| BoundingBox::new(x, y, w, h).unwrap();
        assert_eq!(fuse_box(&b(1.0, 2.0, 3.0, 4.0), &b(1.0, 2.0, 3.0, 4.0), 7.0).unwrap(), b(1.0, 2.0, 3.0, 4.0));
        assert_eq!(
            fuse_box(&b(0.0, 0.0, 10.0, 10.0), &b(2.0, 2.0, 10.0, 10.0), 1.0).unwrap(),
            b(1.0, 1.0, 10.0, 10.0)
        );
        assert_eq!(
            fuse_box(&b(0.0, 0.0, 8.0, 6.0), &b(4.0, 2.0, 10.0, 10.0), 3.0).unwrap(),
            b(3.0, 1.5, 9.5, 9.0)
        );
    }

    #[test]
    fn gaussian_fusion_keeps_sigma() {
        let g1 = GaussianBox::new(BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap(), 2.5).unwrap();
        let g2 = GaussianBox::new(BoundingBox::new(4.0, 4.0, 2.0, 2.0).unwrap(), 2.5).unwrap();
        let f = g1.fuse(&g2, 1.0).unwrap();
        assert_eq!(f.sigma, 2.5);
        assert_eq!(f.mean, BoundingBox::new(2.0, 2.0, 2.0, 2.0).unwrap());
        assert!(GaussianBox::new(g1.mean, 0.0).is_err());
        assert_eq!(g1.kl(&g1).unwrap(), 0.0);
    }

    #[test]
    fn softened_one_hot_fixtures() {
        let s = softened_one_hot(0, 0.1, 2).unwrap().probabilities();
        for (a, b) in s.iter().zip([0.9, 0.05, 0.05]) {
            assert!((a - b).abs() < 1e-15);
        }
        let s = softened_one_hot(1, 0.2, 4).unwrap().probabilities();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s[1] - 0.8).abs() < 1e-15);
        for k in [0, 2, 3, 4] {
            assert!((s[k] - 0.05).abs() < 1e-15);
        }
        assert!(softened_one_hot(0, 0.0, 2).is_err());
        assert!(softened_one_hot(0, 1.0, 2).is_err());
        assert!(softened_one_hot(3, 0.1, 2).is_err());
    }

    #[test]
    fn alpha_schedule_endpoints() {
        let s = AlphaSchedule::new(100.0, 0.5, 1000).unwrap();
        assert_eq!(s.alpha_at(0), 100.0);
        assert_eq!(s.alpha_at(1000), 0.5);
        assert_eq!(s.alpha_at(500), 50.25);
        assert_eq!(s.alpha_at(1_000_000), 0.5);
        assert!(AlphaSchedule::new(1.0, 0.0, 0).is_err());
        assert!(AlphaSchedule::new(-1.0, 0.0, 5).is_err());
    }

    fn arb_logits(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-6.0..6.0f64, n)
    }

    proptest! {
        #[test]
        fn probabilities_are_normalized(logits in arb_logits(5), shift in -50.0..50.0f64) {
            let p = dist(&logits).probabilities();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = dist(&shifted).probabilities();
            prop_assert!(tv_distance(&p, &q) < 1e-12);
        }

        #[test]
        fn logit_fusion_matches_geometric_mean(
            l1 in arb_logits(4), l2 in arb_logits(4), alpha in 0.0..20.0f64
        ) {
            // the direct product underflows for larger alpha; the logit path does not
            let (p1, p2) = (dist(&l1), dist(&l2));
            let fused = fuse_categorical(&p1, &p2, alpha).unwrap().probabilities();
            let geo = geometric_mean_probabilities(&p1.probabilities(), &p2.probabilities(), alpha).unwrap();
            for (a, b) in fused.iter().zip(&geo) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn fusion_is_permutation_equivariant(
            l1 in arb_logits(4), l2 in arb_logits(4), alpha in 0.0..50.0f64,
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()
        ) {
            let fused = fuse_categorical(&dist(&l1), &dist(&l2), alpha).unwrap().probabilities();
            let pl1: Vec<f64> = perm.iter().map(|&i| l1[i]).collect();
            let pl2: Vec<f64> = perm.iter().map(|&i| l2[i]).collect();
            let pf = fuse_categorical(&dist(&pl1), &dist(&pl2), alpha).unwrap().probabilities();
            for (k, &i) in perm.iter().enumerate() {
                prop_assert!((pf[k] - fused[i]).abs() < 1e-14);
            }
        }

        #[test]
        fn fusion_moves_monotonically_toward_auxiliary(l1 in arb_logits(4), l2 in arb_logits(4)) {
            let (p1, p2) = (dist(&l1), dist(&l2));
            let target = p2.probabilities();
            prop_assume!(tv_distance(&p1.probabilities(), &target) > 1e-3);
            let mut prev = f64::INFINITY;
            for alpha in [1.0, 10.0, 100.0, 1e4] {
                let d = tv_distance(&fuse_categorical(&p1, &p2, alpha).unwrap().probabilities(), &target);
                prop_assert!(d < prev);
                prev = d;
            }
        }

        #[test]
        fn kl_is_nonnegative(l1 in arb_logits(5), l2 in arb_logits(5)) {
            let (p, q) = (dist(&l1), dist(&l2));
            prop_assert!(kl_categorical(&p, &q).unwrap() >= 0.0);
            prop_assert!(kl_categorical(&p, &p).unwrap().abs() < 1e-15);
        }

        #[test]
        fn schedule_is_monotone_and_continuous(
            start in 1.0..200.0f64, end in 0.0..1.0f64, steps in 1u64..5000, probe in 0u64..6000
        ) {
            let s = AlphaSchedule::new(start, end, steps).unwrap();
            prop_assert!(s.alpha_at(probe + 1) <= s.alpha_at(probe));
            let before = s.alpha_at(steps - 1);
            prop_assert!((before - end).abs() <= (start - end) / steps as f64 + 1e-12);
        }
    }
}
