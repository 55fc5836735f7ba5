//! High-dimensional robust mean estimation: the many-large-eigenvalue
//! filter, the few-eigenvalue estimator, the filter outer loop, and the
//! noisy-covariance extension.

use nalgebra::DVector;

use crate::constants::{
    C0_HANSON_WRIGHT, C1_MEAN, C2_MEAN, C3_MEAN, C_INIT_MEAN, EPS0_MEAN, LOWDIM_CAP_DEFAULT,
};
use crate::error::{Error, Result};
use crate::gaussian::{empirical_moments, normal_cdf, sym_eigendecomp, Subspace};
use crate::lowdim::{learn_mean_low_d, LowDimOptions};
use crate::univariate::median;
use crate::{Matrix, Samples, Vector};

/// Outcome of one filter invocation: either a certified payload, a strictly
/// smaller surviving row set, or a small certified subspace.
#[derive(Debug, Clone)]
pub enum FilterOutcome<T> {
    Estimate(T),
    /// Indices (into the input set) of the rows that survive.
    Filtered(Vec<usize>),
    SubspaceOk(Subspace),
}

/// Surviving original-row index sets after each filtering round, for ledger
/// instrumentation.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub kept_rounds: Vec<Vec<usize>>,
}

impl RunTrace {
    fn record(&mut self, kept: Vec<usize>) {
        self.kept_rounds.push(kept);
    }

    pub fn rounds(&self) -> usize {
        self.kept_rounds.len()
    }
}

/// Mean estimate together with its filtering trace.
#[derive(Debug, Clone)]
pub struct MeanEstimate {
    pub mean: Vector,
    pub trace: RunTrace,
}

/// Tunables of the mean pipeline. `alpha`/`beta` trade accuracy against the
/// eigenvalue threshold (error contract
/// `((sqrt(pi) + O(gamma))/(1-alpha) + 1/sqrt(beta)) eps`); `rho` is the
/// direction-net resolution of the low-dimensional learner; `chi` the
/// spectral covariance slack of the noisy extension.
#[derive(Debug, Clone, Copy)]
pub struct MeanOptions {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub chi: f64,
    pub lowdim_cap: usize,
}

impl Default for MeanOptions {
    fn default() -> Self {
        Self {
            gamma: 0.2,
            alpha: 0.3,
            beta: 1.0,
            rho: 0.2,
            chi: 0.0,
            lowdim_cap: LOWDIM_CAP_DEFAULT,
        }
    }
}

impl MeanOptions {
    fn lowdim(&self) -> LowDimOptions {
        LowDimOptions {
            dim_cap: self.lowdim_cap,
        }
    }
}

fn ln_inv(eps: f64) -> f64 {
    if eps <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 / eps).ln()
    }
}

/// Subspace of eigenvectors of the (population-style) covariance minus `I`
/// with eigenvalue above `threshold`, largest eigenvalues first.
fn large_eigen_subspace(samples: &Samples, threshold: f64) -> Result<(Subspace, Vector)> {
    let n = samples.nrows() as f64;
    let (_, cov) = empirical_moments(samples, None)?;
    let cov_pop = cov * ((n - 1.0) / n);
    let d = samples.ncols();
    let shifted = cov_pop - Matrix::identity(d, d);
    let (vals, vecs) = sym_eigendecomp(&shifted)?;
    let mut cols: Vec<usize> = (0..d).filter(|&i| vals[i] > threshold).collect();
    cols.reverse(); // descending eigenvalue order
    let mut basis = Matrix::zeros(d, cols.len());
    let mut lambdas = DVector::zeros(cols.len());
    for (j, &i) in cols.iter().enumerate() {
        basis.set_column(j, &vecs.column(i));
        lambdas[j] = vals[i];
    }
    Ok((Subspace::new(basis)?, lambdas))
}

/// Threshold search shared by the quadratic filters: find `T` such that
/// either (a) `T` is beyond the goodness boundedness radius and some point
/// exceeds it, or (b) the empirical tail at `T` beats the certified tail
/// bound plus the cushion. Returns the accepted `T`.
pub(crate) fn quadratic_threshold_search(
    pvals: &[f64],
    far_threshold: f64,
    grid_origin: f64,
    rate: f64,
    cushion: f64,
) -> Option<f64> {
    let n = pvals.len() as f64;
    let pmax = pvals.iter().copied().fold(f64::MIN, f64::max);
    if pmax > far_threshold {
        return Some(far_threshold);
    }
    let mut t = grid_origin;
    while t < pmax {
        let tail = pvals.iter().filter(|&&p| p > t).count() as f64 / n;
        let bound = (-rate * t).exp() + cushion;
        if tail > bound {
            return Some(t);
        }
        t *= 1.1;
    }
    None
}

/// Filter for the regime with many large covariance eigenvalues. Returns
/// `Filtered` (strictly smaller surviving set, ledger-improving) when
/// `dim(V) >= min(C1 beta ln(1/eps), cap + 1)`, else `SubspaceOk(V)` with
/// `dim(V) <= cap`. Expects pre-centered samples.
pub fn filter_mean_many_eig(
    samples: &Samples,
    epsilon: f64,
    delta: f64,
    options: &MeanOptions,
) -> Result<FilterOutcome<Vector>> {
    let n = samples.nrows();
    let d = samples.ncols();
    if n < 2 {
        return Err(Error::InsufficientSamples("need at least 2 samples".into()));
    }
    let eigen_threshold = epsilon / options.beta + 2.0 * options.chi;
    let (v, _) = large_eigen_subspace(samples, eigen_threshold)?;
    let trigger = (C1_MEAN * options.beta * ln_inv(epsilon)).min(options.lowdim_cap as f64 + 1.0);
    if (v.dim() as f64) < trigger {
        return Ok(FilterOutcome::SubspaceOk(v));
    }

    let k = v
        .dim()
        .min(trigger.ceil() as usize)
        .min(options.lowdim_cap);
    let v_prime = Subspace::new(v.basis().columns(0, k).into_owned())?;
    let mu_tilde = learn_mean_low_d(
        &v_prime,
        options.gamma,
        epsilon,
        delta,
        samples,
        options.rho,
        &options.lowdim(),
    )?;

    // p(x) = |Pi_{V'} x - mu_tilde|^2 - dim(V')
    let center = v_prime.basis().transpose() * &mu_tilde;
    let coords = v_prime.coords(samples);
    let pvals: Vec<f64> = (0..n)
        .map(|r| (coords.row(r).transpose() - &center).norm_squared() - k as f64)
        .collect();

    let log_term = ((n as f64) / delta).ln();
    let far = C2_MEAN * d as f64 * log_term;
    let origin = 2.0 * C3_MEAN * ln_inv(epsilon) / C0_HANSON_WRIGHT;
    let rate = C0_HANSON_WRIGHT / (2.0 * C3_MEAN);
    let cushion = options.gamma * epsilon / (d as f64 * log_term);
    let t = quadratic_threshold_search(&pvals, far, origin, rate, cushion)
        .ok_or_else(|| {
            Error::Internal(
                "many-eigenvalue filter found no admissible threshold; goodness violated".into(),
            )
        })?;
    let kept: Vec<usize> = (0..n).filter(|&r| pvals[r] <= t).collect();
    if kept.len() == n || kept.is_empty() {
        return Err(Error::Internal("filter did not shrink the set".into()));
    }
    Ok(FilterOutcome::Filtered(kept))
}

/// Mean estimate in the regime where all large eigendirections fit in `V`:
/// the low-dimensional learner on `V` plus the empirical mean on the
/// complement.
pub fn filter_mean_few_eig(
    samples: &Samples,
    epsilon: f64,
    delta: f64,
    options: &MeanOptions,
    v: &Subspace,
) -> Result<Vector> {
    if v.dim() > options.lowdim_cap {
        return Err(Error::InvalidInput(format!(
            "subspace dimension {} above the low-dimensional cap",
            v.dim()
        )));
    }
    let mu_v = learn_mean_low_d(
        v,
        options.gamma,
        epsilon,
        delta,
        samples,
        options.rho,
        &options.lowdim(),
    )?;
    let (mean, _) = empirical_moments(samples, None)?;
    let mean_proj = v.project(&mean);
    Ok(mu_v + mean - mean_proj)
}

/// One round of the optimal mean filter: either an estimate with the
/// `((sqrt(pi)+O(gamma))/(1-alpha) + 1/sqrt(beta)) eps` contract or a
/// strictly smaller, ledger-improving surviving set.
pub fn filter_mean_opt(
    samples: &Samples,
    epsilon: f64,
    delta: f64,
    options: &MeanOptions,
) -> Result<FilterOutcome<Vector>> {
    match filter_mean_many_eig(samples, epsilon, delta, options)? {
        FilterOutcome::Filtered(kept) => Ok(FilterOutcome::Filtered(kept)),
        FilterOutcome::SubspaceOk(v) => {
            let est = filter_mean_few_eig(samples, epsilon, delta, options, &v)?;
            Ok(FilterOutcome::Estimate(est))
        }
        FilterOutcome::Estimate(_) => unreachable!(),
    }
}

/// Crude robust initializer: iterated single-direction eigenvalue filter.
/// While the top sample-covariance eigenvalue exceeds
/// `1 + C eps ln(1/eps) + 2 chi` (plus a sampling allowance), projects onto
/// the top eigenvector and removes the tail beyond a threshold at which the
/// empirical tail exceeds several times the Gaussian one. Contract:
/// `|mu_0 - mu| <= C' eps sqrt(ln 1/eps)` on good-dominated inputs.
pub fn initial_mean_estimate(
    samples: &Samples,
    epsilon: f64,
    chi: f64,
) -> Result<(Vector, Vec<Vec<usize>>)> {
    let n = samples.nrows();
    let d = samples.ncols();
    if n < 2 {
        return Err(Error::InsufficientSamples("need at least 2 samples".into()));
    }
    let mut active: Vec<usize> = (0..n).collect();
    let mut rounds: Vec<Vec<usize>> = Vec::new();
    let eps_eff = epsilon.max(1.0 / n as f64);
    let scale = 1.0 + chi;

    for round in 0..n {
        let current = select_rows(samples, &active);
        let na = current.nrows() as f64;
        let (mean, cov) = empirical_moments(&current, None)?;
        let cov_pop = cov * ((na - 1.0) / na);
        let (vals, vecs) = sym_eigendecomp(&cov_pop)?;
        let lambda_top = vals[d - 1];
        let allowance = 2.5 * (d as f64 / na).sqrt();
        if lambda_top <= 1.0 + C_INIT_MEAN * epsilon * ln_inv(epsilon).min(1e12) + 2.0 * chi + allowance
        {
            return Ok((mean, rounds));
        }
        let top = vecs.column(d - 1).into_owned();
        let projections: Vec<f64> = active
            .iter()
            .map(|&r| samples.row(r).transpose().dot(&top))
            .collect();
        let center = median(&projections)?;
        let scores: Vec<f64> = projections.iter().map(|p| (p - center).abs()).collect();
        let smax = scores.iter().copied().fold(f64::MIN, f64::max);

        let mut t = (2.0 * (8.0 / eps_eff).ln()).sqrt() * scale;
        let mut accepted = None;
        while t < smax {
            let tail = scores.iter().filter(|&&s| s > t).count() as f64 / na;
            let gauss = 2.0 * (1.0 - normal_cdf(t / scale));
            let bound = 8.0 * gauss + eps_eff / (d as f64 * (na / 0.05).ln());
            if tail > bound {
                accepted = Some(t);
                break;
            }
            t *= 1.07;
        }
        let Some(t) = accepted else {
            // inflated eigenvalue but sub-Gaussian tails: nothing safe to
            // remove, settle for the current mean
            return Ok((mean, rounds));
        };
        let survivors: Vec<usize> = active
            .iter()
            .zip(&scores)
            .filter(|(_, &s)| s <= t)
            .map(|(&r, _)| r)
            .collect();
        if survivors.len() == active.len() || survivors.is_empty() {
            return Ok((mean, rounds));
        }
        active = survivors;
        rounds.push(active.clone());
        let _ = round;
    }
    Err(Error::Internal(
        "initializer exceeded its filtering budget".into(),
    ))
}

pub(crate) fn select_rows(samples: &Samples, rows: &[usize]) -> Samples {
    let mut out = Samples::zeros(rows.len(), samples.ncols());
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from(&samples.row(r));
    }
    out
}

/// Full robust mean recovery: center with the initializer, then iterate the
/// optimal filter (each `Filtered` outcome strictly shrinks the set) until
/// an estimate is certified.
pub fn recover_mean(
    samples: &Samples,
    epsilon: f64,
    delta: f64,
    options: &MeanOptions,
) -> Result<MeanEstimate> {
    if epsilon > EPS0_MEAN {
        return Err(Error::InvalidInput(format!(
            "epsilon {epsilon} above the supported limit {EPS0_MEAN}"
        )));
    }
    let n = samples.nrows();
    let (mu0, init_rounds) = initial_mean_estimate(samples, epsilon, options.chi)?;
    let mut trace = RunTrace::default();
    for r in init_rounds {
        trace.record(r);
    }
    let mut active: Vec<usize> = trace
        .kept_rounds
        .last()
        .cloned()
        .unwrap_or_else(|| (0..n).collect());

    for _ in 0..=n {
        let mut current = select_rows(samples, &active);
        for r in 0..current.nrows() {
            let row = current.row(r) - mu0.transpose();
            current.row_mut(r).copy_from(&row);
        }
        match filter_mean_opt(&current, epsilon, delta, options)? {
            FilterOutcome::Estimate(e) => {
                return Ok(MeanEstimate {
                    mean: e + &mu0,
                    trace,
                })
            }
            FilterOutcome::Filtered(kept_local) => {
                active = kept_local.iter().map(|&i| active[i]).collect();
                trace.record(active.clone());
            }
            FilterOutcome::SubspaceOk(_) => unreachable!(),
        }
    }
    Err(Error::Internal("filter loop exceeded the round budget".into()))
}

/// Mean recovery tolerant of spectral covariance error `|Sigma - I|_2 <=
/// O(chi)`: the eigenvalue thresholds relax by `O(chi)` and the
/// per-direction median slack widens accordingly. With `chi = 0` this is
/// exactly [`recover_mean`].
pub fn recover_mean_noisy(
    samples: &Samples,
    epsilon: f64,
    delta: f64,
    gamma: f64,
    chi: f64,
) -> Result<MeanEstimate> {
    let options = MeanOptions {
        gamma,
        chi,
        ..Default::default()
    };
    recover_mean(samples, epsilon, delta, &options)
}
