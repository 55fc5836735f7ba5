//! Strong-contamination simulators, the lost-good/kept-bad potential ledger,
//! lower-bound adversary constructions, and an empirical goodness checker.
//!
//! The adversary inspects the clean samples and appends points; every clean
//! row survives unmodified (except for the subtractive baseline, which is
//! explicitly outside the additive model).

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{
    empirical_moments, normal_pdf, poly_second_moment, psd_inv_sqrt, sample_gaussian,
    sym_eigendecomp, GaussianParams,
};
use crate::{Matrix, Samples, Vector};

/// Per-row provenance tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Good,
    Adversarial,
}

/// An `eps`-corrupted sample set, optionally with ground-truth labels.
/// Row order carries no information; the adversary output is shuffled.
#[derive(Debug, Clone)]
pub struct ContaminatedSet {
    pub samples: Samples,
    pub labels: Option<Vec<Label>>,
    pub epsilon: f64,
}

impl ContaminatedSet {
    /// Indices of good rows (requires labels).
    pub fn good_rows(&self) -> Result<Vec<usize>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("labels unavailable".into()))?;
        Ok(labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Label::Good)
            .map(|(i, _)| i)
            .collect())
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }
}

/// Lost-good / kept-bad fractions and the combined potential
/// `Delta = psi + phi ln(1/phi)` (with `0 ln(1/0) = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaLedger {
    pub phi: f64,
    pub psi: f64,
    pub delta: f64,
}

impl DeltaLedger {
    pub fn from_fractions(phi: f64, psi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&phi) || !(0.0..=1.0).contains(&psi) {
            return Err(Error::InvalidInput(
                "ledger fractions must lie in [0, 1]".into(),
            ));
        }
        let ent = if phi == 0.0 { 0.0 } else { phi * (1.0 / phi).ln() };
        Ok(Self {
            phi,
            psi,
            delta: psi + ent,
        })
    }
}

/// Contamination strategy. Each kind documents whether it is additive-only
/// (strong model) or additive+subtractive (comparison only).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdversaryStrategy {
    /// Additive. Outliers sit at `mean + magnitude * sqrt(ln 1/eps)` along
    /// one or more orthogonal directions (random unless `direction` given).
    /// This is the configuration that defeats single-direction filters.
    TailShift {
        #[serde(default = "default_magnitude")]
        magnitude: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
        #[serde(default = "default_one")]
        directions: usize,
    },
    /// Additive. All outliers at a single point at the given distance.
    DenseCluster {
        distance: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// Additive, univariate. Outliers drawn from
    /// `(max{p1, p2}/eta - (1-eps) p1)/eps`, making the corrupted set
    /// indistinguishable from the corruption of the mirrored Gaussian.
    HuberMaxDensity,
    /// Subtractive (outside the strong model; baseline comparison only).
    /// Removes the top `eps` fraction along a direction.
    SubtractiveTruncation {
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// Additive. Symmetric pairs at `mean +- distance * u_j` across
    /// orthogonal directions: inflates variance without moving the mean.
    VarianceInflation {
        distance: f64,
        #[serde(default = "default_one")]
        directions: usize,
    },
    /// Additive. Outliers cycle through an explicit point list.
    Custom { points: Vec<Vec<f64>> },
}

fn default_magnitude() -> f64 {
    1.0
}

fn default_one() -> usize {
    1
}

impl AdversaryStrategy {
    /// Whether every clean row survives into the output.
    pub fn is_additive(&self) -> bool {
        !matches!(self, AdversaryStrategy::SubtractiveTruncation { .. })
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `k` orthonormal directions: the user-supplied one (normalized) extended
/// by seeded random directions, orthonormalized by Gram-Schmidt.
fn pick_directions(
    d: usize,
    k: usize,
    supplied: &Option<Vec<f64>>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vector>> {
    if k > d {
        return Err(Error::InvalidInput(format!(
            "{k} orthogonal directions requested in dimension {d}"
        )));
    }
    let mut dirs: Vec<Vector> = Vec::with_capacity(k);
    if let Some(v) = supplied {
        if v.len() != d {
            return Err(Error::InvalidInput("direction has wrong length".into()));
        }
        let v = DVector::from_row_slice(v);
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::InvalidInput("zero direction".into()));
        }
        dirs.push(v / n);
    }
    while dirs.len() < k {
        let mut v = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        for u in &dirs {
            let c = u.dot(&v);
            v -= u * c;
        }
        let n = v.norm();
        if n > 1e-9 {
            dirs.push(v / n);
        }
    }
    Ok(dirs)
}

/// Produces an `eps`-corrupted set from clean samples under the given
/// strategy. Adds `floor(eps * n)` points (`n` = output size), keeps every
/// clean row (additive strategies), labels all rows, and shuffles.
pub fn corrupt(
    clean: &Samples,
    epsilon: f64,
    strategy: &AdversaryStrategy,
    seed: u64,
) -> Result<ContaminatedSet> {
    if !(0.0..=1.0 / 3.0).contains(&epsilon) {
        return Err(Error::InvalidInput(format!(
            "epsilon {epsilon} outside [0, 1/3]"
        )));
    }
    let m = clean.nrows();
    let d = clean.ncols();
    if m == 0 {
        return Err(Error::InvalidInput("clean set is empty".into()));
    }
    let mut rng = stream_rng(seed, 0);

    // Largest a with a <= eps * (m + a), so the adversarial count is
    // floor(eps * n) for the final n.
    let mut added = (epsilon * m as f64 / (1.0 - epsilon).max(f64::MIN_POSITIVE)).floor() as usize;
    while ((added + 1) as f64) <= epsilon * ((m + added + 1) as f64) {
        added += 1;
    }
    while added > 0 && (added as f64) > epsilon * ((m + added) as f64) {
        added -= 1;
    }

    let base_mean = clean.row_mean().transpose();

    let mut rows: Vec<(Vector, Label)> = Vec::new();
    match strategy {
        AdversaryStrategy::SubtractiveTruncation { direction } => {
            let dir = pick_directions(d, 1, direction, &mut rng)?.remove(0);
            let mut scored: Vec<(f64, usize)> = (0..m)
                .map(|r| (clean.row(r).transpose().dot(&dir), r))
                .collect();
            scored.sort_by(|a, b| a.0.total_cmp(&b.0));
            let removed = (epsilon * m as f64).floor() as usize;
            for &(_, r) in scored.iter().take(m - removed) {
                rows.push((clean.row(r).transpose(), Label::Good));
            }
        }
        _ => {
            for r in 0..m {
                rows.push((clean.row(r).transpose(), Label::Good));
            }
            let bad = adversarial_points(strategy, &base_mean, epsilon, added, d, &mut rng)?;
            debug_assert_eq!(bad.len(), added);
            for b in bad {
                rows.push((b, Label::Adversarial));
            }
        }
    }

    let mut shuffle_rng = stream_rng(seed, 1);
    rows.shuffle(&mut shuffle_rng);

    let n = rows.len();
    let mut samples = DMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for (i, (x, l)) in rows.into_iter().enumerate() {
        samples.row_mut(i).copy_from(&x.transpose());
        labels.push(l);
    }
    Ok(ContaminatedSet {
        samples,
        labels: Some(labels),
        epsilon,
    })
}

fn adversarial_points(
    strategy: &AdversaryStrategy,
    base_mean: &Vector,
    epsilon: f64,
    count: usize,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vector>> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return Ok(out);
    }
    match strategy {
        AdversaryStrategy::TailShift {
            magnitude,
            direction,
            directions,
        } => {
            let k = (*directions).max(1);
            let dirs = pick_directions(d, k, direction, rng)?;
            let shift = magnitude * (1.0 / epsilon).ln().sqrt();
            for i in 0..count {
                let u = &dirs[i % k];
                out.push(base_mean + u * shift);
            }
        }
        AdversaryStrategy::DenseCluster {
            distance,
            direction,
        } => {
            let u = pick_directions(d, 1, direction, rng)?.remove(0);
            let point = base_mean + u * *distance;
            for _ in 0..count {
                out.push(point.clone());
            }
        }
        AdversaryStrategy::VarianceInflation {
            distance,
            directions,
        } => {
            let k = (*directions).max(1);
            let dirs = pick_directions(d, k, &None, rng)?;
            for i in 0..count {
                let u = &dirs[(i / 2) % k];
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                out.push(base_mean + u * (sign * *distance));
            }
        }
        AdversaryStrategy::HuberMaxDensity => {
            if d != 1 {
                return Err(Error::InvalidInput(
                    "huber_max_density is univariate".into(),
                ));
            }
            let pair = lower_bound_pair(epsilon)?;
            // The instance is built around N(-alpha, 1); shift so the clean
            // mean plays the role of -alpha.
            let offset = base_mean[0] + pair.alpha;
            for _ in 0..count {
                out.push(DVector::from_element(
                    1,
                    pair.sample_outlier(rng) + offset,
                ));
            }
        }
        AdversaryStrategy::Custom { points } => {
            if points.is_empty() {
                return Err(Error::InvalidInput("custom point list is empty".into()));
            }
            for p in points {
                if p.len() != d {
                    return Err(Error::InvalidInput("custom point has wrong length".into()));
                }
            }
            for i in 0..count {
                out.push(DVector::from_row_slice(&points[i % points.len()]));
            }
        }
        AdversaryStrategy::SubtractiveTruncation { .. } => unreachable!(),
    }
    Ok(out)
}

/// Ledger of a surviving subset against the original labeled set:
/// `phi = |lost good| / |S'|`, `psi = |kept bad| / |S'|`.
pub fn delta_ledger(original: &ContaminatedSet, kept_rows: &[usize]) -> Result<DeltaLedger> {
    let labels = original
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("ledger requires labels".into()))?;
    let n = original.n();
    if kept_rows.iter().any(|&r| r >= n) {
        return Err(Error::InvalidInput("kept row index out of range".into()));
    }
    let mut kept = vec![false; n];
    for &r in kept_rows {
        kept[r] = true;
    }
    let s_prime = kept_rows.len();
    if s_prime == 0 {
        return Err(Error::InvalidInput("empty surviving set".into()));
    }
    let mut lost_good = 0usize;
    let mut kept_bad = 0usize;
    for (i, l) in labels.iter().enumerate() {
        match (l, kept[i]) {
            (Label::Good, false) => lost_good += 1,
            (Label::Adversarial, true) => kept_bad += 1,
            _ => {}
        }
    }
    DeltaLedger::from_fractions(lost_good as f64 / s_prime as f64, kept_bad as f64 / s_prime as f64)
}

/// The indistinguishable pair of Appendix-style lower bounds: `N(-alpha, 1)`
/// and `N(alpha, 1)` share the corrupted density `max{p1, p2}/eta`.
#[derive(Debug, Clone)]
pub struct LowerBoundPair {
    pub alpha: f64,
    pub eta: f64,
    pub epsilon: f64,
}

/// Largest mean separation `+-alpha` whose mirrored pair can be corrupted to
/// the common density: `alpha = sqrt(2) erfinv(eps/(1-eps))`, i.e. the
/// largest `alpha` with `1 - eps <= 1/eta`, `eta = 1 + erf(alpha/sqrt 2)`.
pub fn lower_bound_pair(epsilon: f64) -> Result<LowerBoundPair> {
    if !(0.0..=0.1).contains(&epsilon) || epsilon == 0.0 {
        return Err(Error::InvalidInput("epsilon must lie in (0, 0.1]".into()));
    }
    let alpha = std::f64::consts::SQRT_2 * statrs::function::erf::erf_inv(epsilon / (1.0 - epsilon));
    let eta = 1.0 + statrs::function::erf::erf(alpha / std::f64::consts::SQRT_2);
    Ok(LowerBoundPair {
        alpha,
        eta,
        epsilon,
    })
}

impl LowerBoundPair {
    pub fn params(&self) -> (GaussianParams, GaussianParams) {
        let cov = DMatrix::identity(1, 1);
        (
            GaussianParams::new(DVector::from_element(1, -self.alpha), cov.clone()).unwrap(),
            GaussianParams::new(DVector::from_element(1, self.alpha), cov).unwrap(),
        )
    }

    /// Common corrupted density `f(x) = max{p1(x), p2(x)} / eta`.
    pub fn common_density(&self, x: f64) -> f64 {
        normal_pdf(x - self.alpha).max(normal_pdf(x + self.alpha)) / self.eta
    }

    /// Density of the outlier distribution `q1` with
    /// `f = (1 - eps) p1 + eps q1` (for `p1 = N(-alpha, 1)`).
    pub fn outlier_density(&self, x: f64) -> f64 {
        ((self.common_density(x) - (1.0 - self.epsilon) * normal_pdf(x + self.alpha))
            / self.epsilon)
            .max(0.0)
    }

    /// Draws from the outlier distribution by rejection against the
    /// balanced two-Gaussian mixture.
    pub fn sample_outlier(&self, rng: &mut ChaCha8Rng) -> f64 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let center = if rng.random::<bool>() { self.alpha } else { -self.alpha };
            let x = z + center;
            let proposal = 0.5 * (normal_pdf(x - self.alpha) + normal_pdf(x + self.alpha));
            let bound = 2.0 * proposal / (self.eta * self.epsilon);
            if rng.random::<f64>() < self.outlier_density(x) / bound {
                return x;
            }
        }
    }

    /// Draws from the common corrupted density `f` itself.
    pub fn sample_common(&self, n: usize, seed: u64) -> Vector {
        let mut rng = stream_rng(seed, 7);
        let mut out = DVector::zeros(n);
        let mut i = 0;
        while i < n {
            let z: f64 = StandardNormal.sample(&mut rng);
            let center = if rng.random::<bool>() { self.alpha } else { -self.alpha };
            let x = z + center;
            let proposal = 0.5 * (normal_pdf(x - self.alpha) + normal_pdf(x + self.alpha));
            // f <= (p1 + p2)/eta = 2 proposal / eta
            if rng.random::<f64>() < self.eta * self.common_density(x) / (2.0 * proposal) {
                out[i] = x;
                i += 1;
            }
        }
        out
    }
}

/// Worst observed margin for one probed goodness condition
/// (`margin <= 0` means the condition held on every probe).
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub name: String,
    pub probes: usize,
    pub worst_margin: f64,
}

/// Report of the empirical goodness probe.
#[derive(Debug, Clone, Serialize)]
pub struct GoodnessReport {
    pub conditions: Vec<ConditionReport>,
    /// `None` when no probes were run.
    pub verdict: Option<bool>,
}

/// Empirically probes the goodness conditions on a labeled inlier set:
/// boundedness of whitened norms, mean and covariance deviation, random
/// affine tail agreement (against `N(mu, I)` after whitening), and random
/// even degree-2 / degree-4 statistics (against `N(0, Sigma)`).
///
/// The conditions quantify over all test functions, which is uncheckable;
/// `budget` random probes per family are sampled instead and the worst
/// violation margin per condition is reported.
pub fn goodness_check(
    good: &Samples,
    params: &GaussianParams,
    eta: f64,
    delta: f64,
    budget: usize,
    seed: u64,
) -> Result<GoodnessReport> {
    let n = good.nrows();
    let d = good.ncols();
    if n < 2 || d != params.dim() {
        return Err(Error::InvalidInput(
            "need >= 2 samples of the right dimension".into(),
        ));
    }
    let nf = n as f64;
    let df = d as f64;
    let log_term = (nf / delta).ln();
    let whitener = psd_inv_sqrt(&params.covariance)?;

    // Whitened rows y = Sigma^{-1/2}(x - mu) ~ N(0, I) for true inliers.
    let mut white = DMatrix::zeros(n, d);
    for r in 0..n {
        let y = &whitener * (good.row(r).transpose() - &params.mean);
        white.row_mut(r).copy_from(&y.transpose());
    }

    let mut conditions = Vec::new();

    // Boundedness: |y|^2 <= d + 2 sqrt(d L) + 2 L with L = ln(n/delta).
    let allowance = df + 2.0 * (df * log_term).sqrt() + 2.0 * log_term;
    let worst = (0..n)
        .map(|r| white.row(r).norm_squared())
        .fold(f64::MIN, f64::max);
    conditions.push(ConditionReport {
        name: "boundedness".into(),
        probes: n,
        worst_margin: worst - allowance,
    });

    // Mean and covariance deviation of the whitened set.
    let (w_mean, w_cov) = empirical_moments(&white, None)?;
    conditions.push(ConditionReport {
        name: "mean_deviation".into(),
        probes: 1,
        worst_margin: w_mean.norm() - eta,
    });
    let (cov_eigs, _) = sym_eigendecomp(&(w_cov - DMatrix::identity(d, d)))?;
    let spec_norm = cov_eigs[0].abs().max(cov_eigs[d - 1].abs());
    conditions.push(ConditionReport {
        name: "cov_spectral".into(),
        probes: 1,
        worst_margin: spec_norm - eta / df,
    });

    if budget == 0 {
        conditions.push(ConditionReport {
            name: "affine_tail".into(),
            probes: 0,
            worst_margin: f64::NEG_INFINITY,
        });
        return Ok(GoodnessReport {
            conditions,
            verdict: None,
        });
    }

    // Affine tails on the whitened data: Pr(<v, y> >= b) vs 1 - Phi(b).
    let affine_allow = eta / (df * (df / (eta * delta)).ln().max(1.0));
    let mut worst_affine = f64::MIN;
    for probe in 0..budget {
        let mut rng = stream_rng(seed, 100 + probe as u64);
        let mut v = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        v /= v.norm();
        let z: f64 = StandardNormal.sample(&mut rng);
        let b = 2.0 * z;
        let proj = &white * &v;
        let emp = proj.iter().filter(|&&t| t >= b).count() as f64 / nf;
        let truth = 1.0 - crate::gaussian::normal_cdf(b);
        worst_affine = worst_affine.max((emp - truth).abs() - affine_allow);
    }
    conditions.push(ConditionReport {
        name: "affine_tail".into(),
        probes: budget,
        worst_margin: worst_affine,
    });

    // Even degree-2 statistics against N(0, Sigma) on the raw data.
    let mut worst_deg2_mean = f64::MIN;
    let mut worst_deg2_second = f64::MIN;
    for probe in 0..budget {
        let mut rng = stream_rng(seed, 10_000 + probe as u64);
        let m = random_unit_symmetric(d, &mut rng);
        let second = poly_second_moment(&m, &params.covariance)?;
        let mean_true =
            crate::gaussian::poly_expectation(&m, &params.covariance)? / std::f64::consts::SQRT_2;
        let tr = m.trace();
        let mut emp = 0.0;
        let mut emp_sq = 0.0;
        for r in 0..n {
            let x = good.row(r).transpose();
            let p = (x.dot(&(&m * &x)) - tr) / std::f64::consts::SQRT_2;
            emp += p;
            emp_sq += p * p;
        }
        emp /= nf;
        emp_sq /= nf;
        worst_deg2_mean = worst_deg2_mean.max((emp - mean_true).abs() - eta * second.sqrt());
        worst_deg2_second = worst_deg2_second.max((emp_sq - second).abs() - eta * second);
    }
    conditions.push(ConditionReport {
        name: "deg2_mean".into(),
        probes: budget,
        worst_margin: worst_deg2_mean,
    });
    conditions.push(ConditionReport {
        name: "deg2_second".into(),
        probes: budget,
        worst_margin: worst_deg2_second,
    });

    // Even degree-4 statistics, with the reference moments estimated from a
    // fresh Monte-Carlo sample of N(0, Sigma).
    let ref_n = 200_000;
    let centered = GaussianParams::new(DVector::zeros(d), params.covariance.clone())?;
    let reference = sample_gaussian(&centered, ref_n, seed ^ 0x9e37_79b9)?;
    let mut worst_deg4 = f64::MIN;
    for probe in 0..budget {
        let mut rng = stream_rng(seed, 20_000 + probe as u64);
        let a = random_unit_symmetric(d, &mut rng);
        let b = random_unit_symmetric(d, &mut rng);
        let quartic = |x: &Vector| {
            let pa = (x.dot(&(&a * x)) - a.trace()) / std::f64::consts::SQRT_2;
            let pb = (x.dot(&(&b * x)) - b.trace()) / std::f64::consts::SQRT_2;
            pa * pb
        };
        let mut ref_mean = 0.0;
        let mut ref_sq = 0.0;
        for r in 0..ref_n {
            let q = quartic(&reference.row(r).transpose());
            ref_mean += q;
            ref_sq += q * q;
        }
        ref_mean /= ref_n as f64;
        ref_sq /= ref_n as f64;
        let ref_sd = (ref_sq - ref_mean * ref_mean).max(0.0).sqrt();
        let emp: f64 =
            (0..n).map(|r| quartic(&good.row(r).transpose())).sum::<f64>() / nf;
        worst_deg4 = worst_deg4.max((emp - ref_mean).abs() - eta * ref_sd);
    }
    conditions.push(ConditionReport {
        name: "deg4_mean".into(),
        probes: budget,
        worst_margin: worst_deg4,
    });

    let verdict = Some(conditions.iter().all(|c| c.worst_margin <= 0.0));
    Ok(GoodnessReport {
        conditions,
        verdict,
    })
}

fn random_unit_symmetric(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let v: f64 = StandardNormal.sample(rng);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    let n = m.norm();
    m / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn clean_set(d: usize, n: usize, seed: u64) -> Samples {
        sample_gaussian(&GaussianParams::standard(d), n, seed).unwrap()
    }

    #[test]
    fn zero_epsilon_is_a_permutation() {
        let clean = clean_set(2, 500, 1);
        let strategy = AdversaryStrategy::TailShift {
            magnitude: 1.0,
            direction: None,
            directions: 1,
        };
        let out = corrupt(&clean, 0.0, &strategy, 2).unwrap();
        assert_eq!(out.n(), 500);
        let mut a: Vec<(i64, i64)> = (0..500)
            .map(|r| ((clean[(r, 0)] * 1e12) as i64, (clean[(r, 1)] * 1e12) as i64))
            .collect();
        let mut b: Vec<(i64, i64)> = (0..500)
            .map(|r| {
                (
                    (out.samples[(r, 0)] * 1e12) as i64,
                    (out.samples[(r, 1)] * 1e12) as i64,
                )
            })
            .collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    #[test]
    fn tail_shift_moves_the_mean_by_eps_times_shift() {
        // d=1, eps=0.05: corrupted mean exceeds truth by eps*sqrt(ln 20).
        let clean = clean_set(1, 100_000, 3);
        let strategy = AdversaryStrategy::TailShift {
            magnitude: 1.0,
            direction: Some(vec![1.0]),
            directions: 1,
        };
        let out = corrupt(&clean, 0.05, &strategy, 4).unwrap();
        let mean = out.samples.column(0).mean();
        let expected = 0.05 * (1.0f64 / 0.05).ln().sqrt();
        assert!(
            (mean - expected).abs() <= 0.01,
            "mean {mean}, expected {expected}"
        );
    }

    #[test]
    fn tail_shift_is_additive() {
        let clean = clean_set(3, 200, 5);
        let strategy = AdversaryStrategy::TailShift {
            magnitude: 1.0,
            direction: None,
            directions: 1,
        };
        let out = corrupt(&clean, 0.1, &strategy, 6).unwrap();
        let labels = out.labels.as_ref().unwrap();
        // every clean row appears unmodified
        let mut found = vec![false; clean.nrows()];
        for r in 0..out.n() {
            if labels[r] == Label::Adversarial {
                continue;
            }
            for c in 0..clean.nrows() {
                if !found[c] && (clean.row(c) - out.samples.row(r)).norm() == 0.0 {
                    found[c] = true;
                    break;
                }
            }
        }
        assert!(found.iter().all(|&f| f));
        // count of adversarial rows = floor(eps * n)
        let bad = labels.iter().filter(|l| **l == Label::Adversarial).count();
        assert_eq!(bad, (0.1 * out.n() as f64).floor() as usize);
    }

    #[test]
    fn huber_densities_agree_pointwise() {
        let eps = 0.05;
        let pair = lower_bound_pair(eps).unwrap();
        // Corrupting p1 with q1 and p2 with q2 both give f by construction;
        // check (1-eps) p1 + eps q1 == f == mirrored version on a grid.
        for i in 0..10_000 {
            let x = -8.0 + 16.0 * (i as f64) / 9_999.0;
            let f = pair.common_density(x);
            let rebuilt = (1.0 - eps) * normal_pdf(x + pair.alpha) + eps * pair.outlier_density(x);
            assert!((f - rebuilt).abs() < 1e-12, "x={x}");
            // mirrored construction gives the same density
            let mirrored = (1.0 - eps) * normal_pdf(-x + pair.alpha)
                + eps * pair.outlier_density(-x);
            assert!((f - mirrored).abs() < 1e-12, "x={x}");
            // feasibility: f >= (1 - eps) p1 pointwise
            assert!(f >= (1.0 - eps) * normal_pdf(x + pair.alpha) - 1e-15);
        }
    }

    #[test]
    fn lower_bound_alpha_value() {
        let eps = 0.05;
        let pair = lower_bound_pair(eps).unwrap();
        // independent bisection on the feasibility equation
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let eta = 1.0 + statrs::function::erf::erf(mid / std::f64::consts::SQRT_2);
            if (1.0 - eps) <= 1.0 / eta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((pair.alpha - lo).abs() < 1e-9, "alpha {} vs {}", pair.alpha, lo);
        // exact solve sits ~5.3% above the asymptotic sqrt(pi/2) eps
        let asymptotic = (std::f64::consts::PI / 2.0).sqrt() * eps;
        assert!((pair.alpha / asymptotic - 1.0).abs() < 0.06);

        // normalization of f by quadrature
        let steps = 400_000;
        let h = 24.0 / steps as f64;
        let mut integral = 0.0;
        for i in 0..steps {
            let x = -12.0 + (i as f64 + 0.5) * h;
            integral += pair.common_density(x) * h;
        }
        assert!((integral - 1.0).abs() < 1e-8, "integral {integral}");
    }

    #[test]
    fn ledger_hand_cases() {
        let samples = DMatrix::zeros(1000, 1);
        let mut labels = vec![Label::Good; 1000];
        for l in labels.iter_mut().take(100) {
            *l = Label::Adversarial;
        }
        let set = ContaminatedSet {
            samples,
            labels: Some(labels),
            epsilon: 0.1,
        };

        // nothing removed
        let all: Vec<usize> = (0..1000).collect();
        let ledger = delta_ledger(&set, &all).unwrap();
        assert_relative_eq!(ledger.phi, 0.0);
        assert_relative_eq!(ledger.psi, 0.1);
        assert_relative_eq!(ledger.delta, 0.1);

        // all bad removed
        let good_only: Vec<usize> = (100..1000).collect();
        let ledger = delta_ledger(&set, &good_only).unwrap();
        assert_relative_eq!(ledger.delta, 0.0);

        // 900 survivors: 50 good lost, 50 bad kept
        let kept: Vec<usize> = (50..950).collect();
        let ledger = delta_ledger(&set, &kept).unwrap();
        let phi = 50.0 / 900.0;
        assert_relative_eq!(ledger.phi, phi);
        assert_relative_eq!(ledger.psi, 50.0 / 900.0);
        assert_relative_eq!(ledger.delta, 50.0 / 900.0 + phi * (900.0f64 / 50.0).ln());

        let unlabeled = ContaminatedSet {
            samples: DMatrix::zeros(10, 1),
            labels: None,
            epsilon: 0.1,
        };
        assert!(delta_ledger(&unlabeled, &[0, 1]).is_err());
    }

    #[test]
    fn ledger_monotonicity() {
        let samples = DMatrix::zeros(1000, 1);
        let mut labels = vec![Label::Good; 1000];
        for l in labels.iter_mut().take(100) {
            *l = Label::Adversarial;
        }
        let set = ContaminatedSet {
            samples,
            labels: Some(labels),
            epsilon: 0.1,
        };
        // removing a bad row never increases Delta
        let with_bad: Vec<usize> = (0..1000).collect();
        let without_bad: Vec<usize> = (1..1000).collect();
        let d0 = delta_ledger(&set, &with_bad).unwrap().delta;
        let d1 = delta_ledger(&set, &without_bad).unwrap().delta;
        assert!(d1 <= d0);
        // removing a good row (phi < 1/e) strictly increases the phi term
        let l0 = delta_ledger(&set, &(0..999).collect::<Vec<_>>()).unwrap();
        let l1 = delta_ledger(&set, &(0..998).collect::<Vec<_>>()).unwrap();
        let ent = |p: f64| if p == 0.0 { 0.0 } else { p * (1.0 / p).ln() };
        assert!(ent(l1.phi) > ent(l0.phi));
    }

    #[test]
    fn goodness_clean_set_passes() {
        let d = 5;
        let good = clean_set(d, 200_000, 9);
        let report =
            goodness_check(&good, &GaussianParams::standard(d), 0.1, 0.05, 20, 10).unwrap();
        assert_eq!(report.verdict, Some(true), "report {report:?}");
        for c in &report.conditions {
            assert!(c.worst_margin <= 0.1, "{c:?}");
        }
    }

    #[test]
    fn goodness_flags_far_point() {
        let d = 4;
        let n = 2_000;
        let mut good = clean_set(d, n, 11);
        let r = (100.0 * d as f64 * (n as f64).ln()).sqrt();
        good[(0, 0)] = r;
        let report =
            goodness_check(&good, &GaussianParams::standard(d), 0.1, 0.05, 5, 12).unwrap();
        let bound = report
            .conditions
            .iter()
            .find(|c| c.name == "boundedness")
            .unwrap();
        assert!(bound.worst_margin > 0.0);
        assert_eq!(report.verdict, Some(false));
    }

    #[test]
    fn goodness_zero_budget_no_verdict() {
        let good = clean_set(3, 1_000, 13);
        let report =
            goodness_check(&good, &GaussianParams::standard(3), 0.1, 0.05, 0, 14).unwrap();
        assert_eq!(report.verdict, None);
        assert!(report
            .conditions
            .iter()
            .any(|c| c.name == "affine_tail" && c.probes == 0));
    }

    #[test]
    fn strategy_json_roundtrip() {
        let json = r#"{"kind":"tail_shift","magnitude":2.0,"directions":3}"#;
        let s: AdversaryStrategy = serde_json::from_str(json).unwrap();
        match &s {
            AdversaryStrategy::TailShift {
                magnitude,
                directions,
                ..
            } => {
                assert_relative_eq!(*magnitude, 2.0);
                assert_eq!(*directions, 3);
            }
            _ => panic!("wrong kind"),
        }
        assert!(s.is_additive());
        let s2: AdversaryStrategy =
            serde_json::from_str(r#"{"kind":"subtractive_truncation"}"#).unwrap();
        assert!(!s2.is_additive());
    }

    #[test]
    fn variance_inflation_keeps_mean() {
        let clean = clean_set(4, 50_000, 15);
        let strategy = AdversaryStrategy::VarianceInflation {
            distance: 6.0,
            directions: 2,
        };
        let out = corrupt(&clean, 0.1, &strategy, 16).unwrap();
        let mean = out.samples.row_mean().transpose();
        assert!(mean.norm() < 0.05, "mean norm {}", mean.norm());
        let (_, cov) = empirical_moments(&out.samples, None).unwrap();
        let (eigs, _) = sym_eigendecomp(&cov).unwrap();
        assert!(eigs[3] > 1.5, "top eigenvalue {}", eigs[3]);
    }
}
