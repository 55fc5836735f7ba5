//! One-dimensional robust primitives: median, MAD scale, per-direction
//! medians, and the truncated chi-squared mean estimator for quadratic
//! statistics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::constants::{CHI2_MC_CAP, KAPPA_M, KAPPA_T, PHI_INV_3_4};
use crate::error::{Error, Result};
use crate::poly::QuadraticPoly;
use crate::{Samples, Vector};

/// Lower median: element at index `ceil(n/2) - 1` of the sorted list.
/// Deterministic and permutation invariant.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidInput("median of empty list".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = (sorted.len() + 1) / 2 - 1;
    Ok(sorted[idx])
}

/// MAD scale estimate: `median(|x_i - median|) / Phi^{-1}(3/4)`, centered at
/// the lower median.
pub fn mad_scale(values: &[f64]) -> Result<f64> {
    let med = median(values)?;
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    Ok(median(&deviations)? / PHI_INV_3_4)
}

/// Median of the projections `<v, x_i>`. Requires a unit direction.
pub fn directional_median(samples: &Samples, v: &Vector) -> Result<f64> {
    if (v.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("direction must be a unit vector".into()));
    }
    let projections = samples * v;
    median(projections.as_slice())
}

/// Symmetric shrinkage toward zero by `T`: the 1-Lipschitz odd map
/// `f(x) = x - T` for `x >= T`, `0` for `|x| <= T`, `x + T` for `x <= -T`.
#[derive(Debug, Clone, Copy)]
pub struct TruncationSpec {
    pub threshold: f64,
}

impl TruncationSpec {
    pub fn new(threshold: f64) -> Result<Self> {
        if threshold <= 0.0 {
            return Err(Error::InvalidInput("threshold must be positive".into()));
        }
        Ok(Self { threshold })
    }

    /// `f(x)`: the part of `x` that sticks out beyond `[-T, T]`.
    pub fn tail(&self, x: f64) -> f64 {
        if x > self.threshold {
            x - self.threshold
        } else if x < -self.threshold {
            x + self.threshold
        } else {
            0.0
        }
    }

    /// `x - f(x)`: `x` clamped to `[-T, T]`.
    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(-self.threshold, self.threshold)
    }
}

/// Robustly estimates `E_{N(0,Sigma)}[p(X)]` from `eps`-corrupted samples of
/// `N(0, Sigma)`, assuming a weak a-priori bound on `|Sigma - I|_F`.
///
/// Truncates `p(X)` at `T = KAPPA_T ln(C)`, averages the clamped values over
/// `S`, and replaces the tail contribution by its Monte-Carlo average under
/// `N(0, I)` over `m = ceil(KAPPA_M ln(2/tau)/eps^2)` fresh draws (capped).
/// The estimate satisfies
/// `|mu_hat - E[p]| <= |Sigma - I|_F / C + O(log C * eps)`
/// with probability `1 - tau`.
pub fn learn_mean_chi_squared(
    samples: &Samples,
    p: &QuadraticPoly,
    epsilon: f64,
    c: f64,
    tau: f64,
    seed: u64,
) -> Result<f64> {
    if c <= 1.0 {
        return Err(Error::InvalidInput(
            "improvement factor C must exceed 1".into(),
        ));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidInput("epsilon must lie in [0, 1]".into()));
    }
    if !(0.0..1.0).contains(&tau) || tau == 0.0 {
        return Err(Error::InvalidInput("tau must lie in (0, 1)".into()));
    }
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::InsufficientSamples("empty sample set".into()));
    }
    let trunc = TruncationSpec::new(KAPPA_T * c.ln())?;

    let mut alpha = 0.0;
    for r in 0..n {
        let x = samples.row(r).transpose();
        alpha += trunc.clamp(p.evaluate(&x));
    }
    alpha /= n as f64;

    let m = chi2_mc_samples(epsilon, tau);
    // The polynomial only depends on the eigenvalues of M under N(0, I):
    // p(X) = sum_i a_i (Z_i^2 - 1) / sqrt(2).
    let eigvals = p.eigenvalues()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tail = 0.0;
    for _ in 0..m {
        let mut val = 0.0;
        for &a in eigvals.iter() {
            let z: f64 = StandardNormal.sample(&mut rng);
            val += a * (z * z - 1.0);
        }
        tail += trunc.tail(val / std::f64::consts::SQRT_2);
    }
    tail /= m as f64;

    Ok(alpha + tail)
}

/// Number of Monte-Carlo tail samples used by [`learn_mean_chi_squared`].
pub fn chi2_mc_samples(epsilon: f64, tau: f64) -> usize {
    if epsilon <= 0.0 {
        return CHI2_MC_CAP;
    }
    let m = (KAPPA_M * (2.0 / tau).ln() / (epsilon * epsilon)).ceil() as usize;
    m.clamp(1, CHI2_MC_CAP)
}

/// Density of the sum of `k` squared standard normals, for `k` in 1..=3.
pub fn chi2_density(k: usize, x: f64) -> Result<f64> {
    if x < 0.0 {
        return Ok(0.0);
    }
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    match k {
        1 => {
            if x == 0.0 {
                Ok(f64::INFINITY)
            } else {
                Ok((-x / 2.0).exp() / (sqrt_2pi * x.sqrt()))
            }
        }
        2 => Ok(0.5 * (-x / 2.0).exp()),
        3 => Ok(x.sqrt() * (-x / 2.0).exp() / sqrt_2pi),
        _ => Err(Error::InvalidInput(format!(
            "chi-squared density implemented for k in 1..=3, got {k}"
        ))),
    }
}

/// CDF companion of [`chi2_density`].
pub fn chi2_cdf(k: usize, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    let half = (x / 2.0).sqrt();
    match k {
        1 => Ok(statrs::function::erf::erf(half)),
        2 => Ok(1.0 - (-x / 2.0).exp()),
        3 => Ok(statrs::function::erf::erf(half)
            - (2.0 * x / std::f64::consts::PI).sqrt() * (-x / 2.0).exp()),
        _ => Err(Error::InvalidInput(format!(
            "chi-squared cdf implemented for k in 1..=3, got {k}"
        ))),
    }
}
