//! Independent numerical minimizers of the two fusion objectives.
//!
//! These never use the closed forms in [`crate::fusion`]; they descend the
//! objectives directly and serve as cross-checks for them.

use crate::error::{Error, Result};
use crate::fusion::{log_softmax, softmax, CategoricalDistribution};
use crate::geometry::BoundingBox;

/// Iteration cap for both minimizers.
pub const MAX_ITERATIONS: usize = 2_000_000;

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(Error::Parameter(format!("alpha must be finite and >= 0, got {alpha}")));
    }
    Ok(())
}

/// `KL(q || p1) + alpha * KL(q || p2)` for probability vectors.
pub fn categorical_objective(q: &[f64], log_p1: &[f64], log_p2: &[f64], alpha: f64) -> f64 {
    q.iter()
        .zip(log_p1.iter().zip(log_p2))
        .map(|(&qk, (&a, &b))| {
            if qk == 0.0 {
                0.0
            } else {
                let lq = qk.ln();
                qk * (lq - a) + alpha * qk * (lq - b)
            }
        })
        .sum()
}

/// Minimizes `KL(q || p1) + alpha * KL(q || p2)` over the simplex by gradient
/// descent on unconstrained logits of `q`.
///
/// The objective is divided by `1 + alpha` so a single `step_size` works over
/// the whole range of `alpha`; the argmin is unchanged. Stops once successive
/// objective values differ by less than 1e-12 and the logit gradient is below
/// 1e-12 in max norm.
pub fn oracle_minimize_categorical(
    p1: &CategoricalDistribution,
    p2: &CategoricalDistribution,
    alpha: f64,
    steps: usize,
    step_size: f64,
) -> Result<CategoricalDistribution> {
    if p1.len() != p2.len() {
        return Err(Error::Dimension {
            expected: p1.len(),
            got: p2.len(),
        });
    }
    check_alpha(alpha)?;
    if !(step_size > 0.0) {
        return Err(Error::Parameter(format!("step size must be positive, got {step_size}")));
    }
    let n = p1.len();
    let lp1 = p1.log_probabilities();
    let lp2 = p2.log_probabilities();
    let scale = 1.0 / (1.0 + alpha);

    let mut theta = vec![0.0; n];
    let mut prev = f64::INFINITY;
    let mut grad = vec![0.0; n];
    for _ in 0..steps {
        let q = softmax(&theta);
        let lq = log_softmax(&theta);
        let f = scale * categorical_objective(&q, &lp1, &lp2, alpha);
        // d/dq_k of the scaled objective, up to an additive constant that the
        // softmax Jacobian removes.
        let g: Vec<f64> = (0..n)
            .map(|k| lq[k] - scale * (lp1[k] + alpha * lp2[k]))
            .collect();
        let mean_g: f64 = q.iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut max_abs = 0.0f64;
        for k in 0..n {
            grad[k] = q[k] * (g[k] - mean_g);
            max_abs = max_abs.max(grad[k].abs());
        }
        if (prev - f).abs() < 1e-12 && max_abs < 1e-12 {
            return CategoricalDistribution::from_logits(theta);
        }
        prev = f;
        for k in 0..n {
            theta[k] -= step_size * grad[k];
        }
    }
    Err(Error::NonConvergence(format!(
        "categorical oracle: {steps} steps without convergence (alpha={alpha})"
    )))
}

/// `KL(N(mu, sigma I) || N(mu1, sigma I)) + alpha * KL(N(mu, sigma I) || N(mu2, sigma I))`.
pub fn gaussian_objective(mu: &[f64; 4], mu1: &[f64; 4], mu2: &[f64; 4], alpha: f64, sigma: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..4 {
        total += (mu[k] - mu1[k]).powi(2) + alpha * (mu[k] - mu2[k]).powi(2);
    }
    total / (2.0 * sigma)
}

/// Minimizes the Normal fusion objective over the mean of `q` by gradient
/// descent, starting from `mu1`, with step `1 / (2L)` where
/// `L = (1 + alpha) / sigma` is the objective's curvature.
pub fn oracle_minimize_gaussian(
    mu1: &BoundingBox,
    mu2: &BoundingBox,
    alpha: f64,
    sigma: f64,
) -> Result<BoundingBox> {
    check_alpha(alpha)?;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    let a = mu1.to_array();
    let b = mu2.to_array();
    let lipschitz = (1.0 + alpha) / sigma;
    let step = 0.5 / lipschitz;
    let mut mu = a;
    let mut prev = gaussian_objective(&mu, &a, &b, alpha, sigma);
    for _ in 0..MAX_ITERATIONS {
        let mut max_abs = 0.0f64;
        let mut grad = [0.0; 4];
        for k in 0..4 {
            grad[k] = ((mu[k] - a[k]) + alpha * (mu[k] - b[k])) / sigma;
            max_abs = max_abs.max(grad[k].abs());
        }
        for k in 0..4 {
            mu[k] -= step * grad[k];
        }
        let f = gaussian_objective(&mu, &a, &b, alpha, sigma);
        if max_abs * step < 1e-15 || ((prev - f).abs() < 1e-12 * prev.abs().max(1e-300) && max_abs * step < 1e-12) {
            return Ok(BoundingBox::from_array(mu));
        }
        prev = f;
    }
    Err(Error::NonConvergence(format!(
        "gaussian oracle did not converge (alpha={alpha}, sigma={sigma})"
    )))
}
