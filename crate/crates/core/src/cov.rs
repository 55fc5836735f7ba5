//! High-dimensional robust covariance estimation: the degree-2 eigenvalue
//! filter, the degree-4 harmonic filter, stitching of diagonal-block
//! estimates through conditional means, the halving contraction step, and
//! the outer recovery loop.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::constants::{
    A_HYPERCONTRACTIVE, C0_HANSON_WRIGHT, C1_COV, C1_DEG4, C2_COV, C2_DEG4, C3_COV, C3_DEG4,
    C_CERT, C_COV_EIG, C_COV_FLOOR, C_INIT_COV, C_STITCH_NORM, EPS0_MEAN, LOWDIM_COV_CAP,
    STITCH_MIN_SAMPLES, XI0_COV,
};
use crate::error::{Error, Result};
use crate::gaussian::{
    empirical_moments, psd_inv_sqrt, psd_sqrt, sym_eigendecomp, top_variance_poly, Subspace,
};
use crate::mean::{quadratic_threshold_search, recover_mean_noisy, select_rows, FilterOutcome,
    RunTrace};
use crate::poly::{
    learn_cov_low_dim, learn_mean_poly_low_d, quartic_norm, PolyLearnOptions, PolySubspace,
    PolyWindow, QuadraticPoly, QuarticHarmonic,
};
use crate::select::{tournament, GaussianHypothesis};
use crate::Caps;
use crate::{Matrix, Samples, Vector};

/// Rows used when assembling the `d^2 x d^2` empirical operators; candidate
/// statistics are always re-verified on the full set.
const OPERATOR_ROW_CAP: usize = 50_000;

/// Diagonal-block covariance estimate with its off-block certificate.
#[derive(Debug, Clone)]
pub struct BlockCovEstimate {
    pub v: Subspace,
    pub w: Subspace,
    /// Estimate of the covariance restricted to `V` (in `V` coordinates).
    pub sigma_v: Matrix,
    /// Estimate over `W` (in `W` coordinates).
    pub sigma_w: Matrix,
    /// Accuracy certificate on quadratics over `W` orthogonal to the
    /// exceptional polynomial subspace.
    pub sigma_w_certificate: f64,
}

impl BlockCovEstimate {
    fn check(&self) -> Result<()> {
        let cross = self.v.basis().transpose() * self.w.basis();
        if cross.norm() > 1e-9 {
            return Err(Error::Internal("V and W are not orthogonal".into()));
        }
        if self.v.dim() + self.w.dim() != self.v.ambient_dim() {
            return Err(Error::Internal("V + W do not span the space".into()));
        }
        Ok(())
    }
}

fn ln_inv(eps: f64) -> f64 {
    if eps <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 / eps).ln()
    }
}

/// Second moment about zero, `E_S[X X^T]` (the covariance filters work in
/// the mean-zero model).
pub fn second_moment(samples: &Samples) -> Result<Matrix> {
    let d = samples.ncols();
    let (_, m) = empirical_moments(samples, Some(&DVector::zeros(d)))?;
    Ok(m)
}

/// Degree-2 covariance filter: eigendecomposes `E_S[XX^T] - I`; when more
/// than `min(C1 ln(1/eps), cap+1)` eigenvalues exceed `C xi`, filters along
/// `p(x) = |Pi_{V'} x|^2 - dim(V')`, otherwise certifies the subspace `V`
/// (of dimension at most the low-dimensional covariance cap).
pub fn filter_cov_many_deg2_eig(
    samples: &Samples,
    epsilon: f64,
    xi: f64,
    delta: f64,
) -> Result<FilterOutcome<Matrix>> {
    let n = samples.nrows();
    let d = samples.ncols();
    if n < 2 {
        return Err(Error::InsufficientSamples("need at least 2 samples".into()));
    }
    let moment = second_moment(samples)?;
    let shifted = moment - Matrix::identity(d, d);
    let (vals, vecs) = sym_eigendecomp(&shifted)?;
    let threshold = C_COV_EIG * xi;
    let mut cols: Vec<usize> = (0..d).filter(|&i| vals[i] > threshold).collect();
    cols.reverse();
    let trigger = (C1_COV * ln_inv(epsilon)).min(LOWDIM_COV_CAP as f64 + 1.0);
    if (cols.len() as f64) < trigger {
        let mut basis = Matrix::zeros(d, cols.len());
        for (j, &i) in cols.iter().enumerate() {
            basis.set_column(j, &vecs.column(i));
        }
        return Ok(FilterOutcome::SubspaceOk(Subspace::new(basis)?));
    }

    let k = cols.len().min(trigger.ceil() as usize + 1).min(6);
    let mut basis = Matrix::zeros(d, k);
    for (j, &i) in cols.iter().take(k).enumerate() {
        basis.set_column(j, &vecs.column(i));
    }
    let vp = Subspace::new(basis)?;
    let coords = vp.coords(samples);
    let pvals: Vec<f64> = (0..n)
        .map(|r| coords.row(r).norm_squared() - k as f64)
        .collect();

    let log_term = ((n as f64) / delta).ln();
    let far = C2_COV * d as f64 * log_term;
    let origin = 2.0 * C3_COV * ln_inv(epsilon) / C0_HANSON_WRIGHT;
    let rate = C0_HANSON_WRIGHT / (2.0 * C3_COV);
    let cushion = epsilon / (d as f64 * log_term);
    let t = quadratic_threshold_search(&pvals, far, origin, rate, cushion).ok_or_else(
        || Error::Internal("degree-2 covariance filter found no threshold".into()),
    )?;
    let kept: Vec<usize> = (0..n).filter(|&r| pvals[r] <= t).collect();
    if kept.len() == n || kept.is_empty() {
        return Err(Error::Internal("filter did not shrink the set".into()));
    }
    Ok(FilterOutcome::Filtered(kept))
}

/// Outcome of the degree-4 filter: either a strictly smaller surviving set
/// or an orthonormal basis of suspicious quadratics over `W` (possibly
/// empty), certifying `E_S[p^2] - 1 <= C2 eps`-scale behavior on the
/// complement.
#[derive(Debug, Clone)]
pub enum Deg4Outcome {
    Filtered(Vec<usize>),
    BasisOk(Vec<QuadraticPoly>),
}

/// Degree-4 harmonic filter over the subspace `W` (whose degree-2
/// eigenvalues are already certified small): greedily accumulates
/// orthonormal quadratics with inflated empirical second moment via the top
/// eigenvector of the empirical fourth-moment operator; with `k` of them it
/// filters on `Q = sum (p_i^2)^{[4]}` using the hypercontractive tail.
pub fn filter_cov_many_deg4_eig(
    samples: &Samples,
    epsilon: f64,
    xi: f64,
    delta: f64,
    w: &Subspace,
    k_cap: usize,
) -> Result<Deg4Outcome> {
    let n = samples.nrows();
    let kw = w.dim();
    if kw == 0 {
        return Ok(Deg4Outcome::BasisOk(Vec::new()));
    }
    let coords = w.coords(samples); // n x kw

    // empirical operator E_S[g g^T]/2 for g = (y y^T - I)^flat, built on a
    // row subsample; candidate statistics are re-verified on the full set
    let op_rows: Vec<usize> = if n > OPERATOR_ROW_CAP {
        let stride = n as f64 / OPERATOR_ROW_CAP as f64;
        (0..OPERATOR_ROW_CAP)
            .map(|i| ((i as f64) * stride) as usize)
            .collect()
    } else {
        (0..n).collect()
    };
    let dd = kw * kw;
    let mut op = Matrix::zeros(dd, dd);
    {
        let mut g = DVector::zeros(dd);
        for &r in &op_rows {
            let y = coords.row(r);
            for i in 0..kw {
                for j in 0..kw {
                    g[i * kw + j] = y[i] * y[j] - if i == j { 1.0 } else { 0.0 };
                }
            }
            op.syger(0.5 / op_rows.len() as f64, &g, &g, 1.0);
        }
        for i in 0..dd {
            for j in (i + 1)..dd {
                op[(i, j)] = op[(j, i)];
            }
        }
    }

    // orthonormal basis of symmetric kw x kw matrices
    let full_basis = PolySubspace::quadratics_on(&Subspace::full(kw));
    let accumulation_threshold = C1_DEG4 * xi + 3.0 * (60.0 / n as f64).sqrt();
    let k_target = {
        let l = ln_inv(epsilon);
        let raw = if l.is_finite() { l.powi(4).ceil() as usize } else { usize::MAX };
        raw.min(k_cap).max(1)
    };

    let mut found: Vec<Matrix> = Vec::new();
    while found.len() < k_target + 1 {
        // basis of the orthocomplement of the found polys
        let mut constraint: Vec<Matrix> = Vec::new();
        for b in full_basis.basis() {
            let mut m = b.clone();
            for f in &found {
                let c = f.dot(&m);
                m -= f * c;
            }
            for c in &constraint {
                let cc = c.dot(&m);
                m -= c * cc;
            }
            if m.norm() > 1e-8 {
                let norm = m.norm();
                constraint.push(m / norm);
            }
        }
        if constraint.is_empty() {
            break;
        }
        let (m_opt, _) = top_variance_poly(&op, &constraint)?;
        // verify on the full set
        let poly = QuadraticPoly::new(m_opt.clone())?;
        let vals = poly.evaluate_rows(&coords);
        let second: f64 = vals.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if second - 1.0 > accumulation_threshold {
            found.push(m_opt);
        } else {
            break;
        }
    }

    let to_ambient = |m: &Matrix| -> Result<QuadraticPoly> {
        QuadraticPoly::new(w.basis() * m * w.basis().transpose())
    };

    if found.len() < k_target {
        let polys: Result<Vec<QuadraticPoly>> = found.iter().map(to_ambient).collect();
        return Ok(Deg4Outcome::BasisOk(polys?));
    }

    // filter on Q = sum of the degree-4 harmonic parts
    let found_polys: Vec<QuadraticPoly> = found
        .iter()
        .take(k_target)
        .map(|m| QuadraticPoly::new(m.clone()))
        .collect::<Result<_>>()?;
    let quartic = QuarticHarmonic::from_polys(&found_polys);
    let q_norm = quartic_norm(&found_polys);
    let qvals: Vec<f64> = (0..n)
        .map(|r| quartic.evaluate(&coords.row(r).transpose()))
        .collect();

    let d = samples.ncols() as f64;
    let kf = k_target as f64;
    let far = C3_DEG4 * d * d * kf.sqrt() * (n as f64).ln();
    let qmax = qvals.iter().copied().fold(f64::MIN, f64::max);
    let cushion = (epsilon * epsilon) / (d * ((n as f64) / delta).ln()).powi(2);
    let t = if qmax > far {
        far
    } else {
        let mut t = 4.0 * A_HYPERCONTRACTIVE * A_HYPERCONTRACTIVE * C2_DEG4 * q_norm
            * ln_inv(epsilon).powi(2);
        let mut accepted = None;
        while t < qmax {
            let tail = qvals.iter().filter(|&&q| q > t).count() as f64 / n as f64;
            let bound = (-A_HYPERCONTRACTIVE * (t / (4.0 * q_norm)).sqrt()).exp() + cushion;
            if tail > bound {
                accepted = Some(t);
                break;
            }
            t *= 1.1;
        }
        accepted.ok_or_else(|| {
            Error::Internal("degree-4 filter found no admissible threshold".into())
        })?
    };
    let kept: Vec<usize> = (0..n).filter(|&r| qvals[r] <= t).collect();
    if kept.len() == n || kept.is_empty() {
        return Err(Error::Internal("degree-4 filter did not shrink the set".into()));
    }
    Ok(Deg4Outcome::Filtered(kept))
}

/// Exact conditional-mean map of the rejection-sampling scheme:
/// `mu_v = (Sigma^{-1} + Pi_V)^{-1} v` for ambient `v` in `V`.
pub fn conditional_mean_exact(sigma: &Matrix, v_sub: &Subspace, v: &Vector) -> Result<Vector> {
    let d = sigma.nrows();
    let inv = sigma
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("singular covariance".into()))?;
    let tilted = inv + v_sub.projector();
    let tilted_inv = tilted
        .try_inverse()
        .ok_or_else(|| Error::Internal("tilted precision not invertible".into()))?;
    let _ = d;
    Ok(tilted_inv * v)
}

/// Recovers the off-diagonal covariance block from conditional means. For
/// each conditioning vector `v ~ N(0, 2 I_V)`, rejection-samples rows with
/// acceptance `exp(-|x_V - v|^2/2)`, robustly estimates the `W`-mean of the
/// accepted rows over the corruption grid `{1, 1/2, ...} down to eta` with
/// tournament selection, then fits `B` minimizing the average Euclidean
/// residual `|a_v - B v|` (IRLS). Returns the block matrix with identity
/// diagonal blocks and off-diagonal `2B`, in ambient coordinates.
#[allow(clippy::too_many_arguments)]
pub fn stitching(
    v: &Subspace,
    w: &Subspace,
    eta: f64,
    xi: f64,
    epsilon: f64,
    fresh: &Samples,
    tau: f64,
    m_vectors: usize,
    seed: u64,
) -> Result<Matrix> {
    let d = v.ambient_dim();
    let kv = v.dim();
    let kw = w.dim();
    if kv == 0 || kw == 0 {
        return Ok(Matrix::identity(d, d));
    }
    let n = fresh.nrows();
    if n < STITCH_MIN_SAMPLES {
        return Err(Error::InsufficientSamples(format!(
            "stitching needs at least {STITCH_MIN_SAMPLES} fresh samples"
        )));
    }
    let xv = v.coords(fresh); // n x kv
    let xw = w.coords(fresh); // n x kw

    let results: Vec<(Vector, Vector)> = (0..m_vectors)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1000 + j as u64);
            let cond = DVector::from_fn(kv, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                std::f64::consts::SQRT_2 * z
            });
            // rejection sampling on the V-coordinates
            let mut rows = Vec::new();
            for r in 0..n {
                let dist2 = (xv.row(r).transpose() - &cond).norm_squared();
                let p = (-dist2 / 2.0).exp();
                if rng.random::<f64>() < p {
                    rows.push(r);
                }
            }
            let a = estimate_conditional_mean(&xw, &rows, eta, xi, epsilon, tau, seed, j)
                .unwrap_or_else(|_| DVector::zeros(kw));
            (cond, a)
        })
        .collect();

    if results.iter().all(|(_, a)| a.norm() == 0.0) {
        return Err(Error::InsufficientSamples(
            "every conditioning vector was starved of samples".into(),
        ));
    }

    // IRLS for min_B sum_j |a_j - B v_j|_2
    let mut b = Matrix::zeros(kw, kv);
    for _ in 0..60 {
        let mut lhs = Matrix::zeros(kv, kv);
        let mut rhs = Matrix::zeros(kw, kv);
        for (cond, a) in &results {
            let resid = (a - &b * cond).norm().max(1e-6);
            let wgt = 1.0 / resid;
            lhs.syger(wgt, cond, cond, 1.0);
            rhs += a * cond.transpose() * wgt;
        }
        for i in 0..kv {
            for j in (i + 1)..kv {
                lhs[(i, j)] = lhs[(j, i)];
            }
        }
        let Some(lhs_inv) = lhs.try_inverse() else { break };
        let next = rhs * lhs_inv;
        let moved = (&next - &b).norm();
        b = next;
        if moved < 1e-10 {
            break;
        }
    }

    let vb = v.basis();
    let wb = w.basis();
    let cross = wb * (&b * 2.0) * vb.transpose();
    Ok(vb * vb.transpose() + wb * wb.transpose() + &cross + cross.transpose())
}

#[allow(clippy::too_many_arguments)]
fn estimate_conditional_mean(
    xw: &Samples,
    rows: &[usize],
    eta: f64,
    xi: f64,
    epsilon: f64,
    tau: f64,
    seed: u64,
    index: usize,
) -> Result<Vector> {
    let kw = xw.ncols();
    if rows.len() < STITCH_MIN_SAMPLES {
        return Ok(DVector::zeros(kw));
    }
    let t = select_rows(xw, rows);
    // corruption grid {1, 1/2, 1/4, ...} down to eta, clipped to the
    // supported range of the mean estimator
    let mut grid = Vec::new();
    let mut e = 1.0f64;
    let floor = eta.max(1e-4);
    while e >= floor {
        if e <= EPS0_MEAN {
            grid.push(e.max(epsilon.min(EPS0_MEAN)));
        }
        e /= 2.0;
    }
    grid.dedup();
    if grid.is_empty() {
        grid.push(epsilon.min(EPS0_MEAN));
    }
    let mut hypotheses = Vec::new();
    for (gi, &ge) in grid.iter().enumerate() {
        if let Ok(est) = recover_mean_noisy(&t, ge, tau, 0.2, xi) {
            if est.mean.norm() <= C_STITCH_NORM * ln_inv(epsilon).max(2.0) {
                let params = crate::gaussian::GaussianParams::new(
                    est.mean.clone(),
                    Matrix::identity(kw, kw),
                )?;
                hypotheses.push((
                    est.mean,
                    GaussianHypothesis::new(params, format!("eps={ge}-{gi}")),
                ));
            }
        }
    }
    if hypotheses.is_empty() {
        return Ok(DVector::zeros(kw));
    }
    let hyps: Vec<&GaussianHypothesis> = hypotheses.iter().map(|(_, h)| h).collect();
    let winner = tournament(&hyps, &t, 0.1, tau, seed ^ ((index as u64) << 20))?;
    Ok(hypotheses[winner].0.clone())
}

/// One contraction round: degree-2 filter, degree-4 filter over the
/// complement, low-dimensional covariance on `V`, robust polynomial means
/// over `W`, and stitching on the fresh slice. Returns either
/// `Estimate(Sigma_hat)` with `|Sigma_hat - Sigma|_F <= |Sigma - I|_F/2`
/// (plus sampling slack) or a ledger-improving surviving set.
pub fn improve_cov(
    samples: &Samples,
    fresh: &Samples,
    xi: f64,
    epsilon: f64,
    delta: f64,
    caps: &Caps,
    seed: u64,
) -> Result<FilterOutcome<Matrix>> {
    let d = samples.ncols();
    let v = match filter_cov_many_deg2_eig(samples, epsilon, xi, delta)? {
        FilterOutcome::Filtered(kept) => return Ok(FilterOutcome::Filtered(kept)),
        FilterOutcome::SubspaceOk(v) => v,
        FilterOutcome::Estimate(_) => unreachable!(),
    };
    let w = v.complement();
    let u1 = match filter_cov_many_deg4_eig(samples, epsilon, xi, delta, &w, caps.k)? {
        Deg4Outcome::Filtered(kept) => return Ok(FilterOutcome::Filtered(kept)),
        Deg4Outcome::BasisOk(polys) => polys,
    };

    let tau = 0.05;
    let poly_opts = PolyLearnOptions {
        frob_bound: xi,
        improvement: None,
        mc_cap: crate::constants::CHI2_MC_CAP,
    };
    let sigma_hat = second_moment(samples)?;
    let certificate = C_CERT * (xi * epsilon.max(1e-9)).sqrt()
        + 3.0 * (d as f64 / samples.nrows() as f64).sqrt();

    // diagonal-block estimates
    let sigma_v_full = learn_cov_low_dim(samples, epsilon, xi, tau, &v, &poly_opts, seed)?;
    let u1_matrices: Vec<Matrix> = u1.iter().map(|p| p.matrix().clone()).collect();
    let u1_sub = PolySubspace::new(u1_matrices)?;
    let window = PolyWindow::ComplementIn {
        within: w.clone(),
        exclude: u1_sub.clone(),
    };
    let sigma_w_full = learn_mean_poly_low_d(
        samples,
        epsilon,
        &u1_sub,
        &window,
        &sigma_hat,
        certificate,
        tau,
        &poly_opts,
        seed ^ 0x77,
    )?;

    let block = BlockCovEstimate {
        sigma_v: v.basis().transpose() * &sigma_v_full * v.basis(),
        sigma_w: w.basis().transpose() * &sigma_w_full * w.basis(),
        v: v.clone(),
        w: w.clone(),
        sigma_w_certificate: certificate,
    };
    block.check()?;

    // Nothing to stitch when one side is trivial.
    if block.v.dim() == 0 || block.w.dim() == 0 {
        let est = block.v.basis() * &block.sigma_v * block.v.basis().transpose()
            + block.w.basis() * &block.sigma_w * block.w.basis().transpose();
        return Ok(FilterOutcome::Estimate(est));
    }

    // Whiten the fresh slice by the diagonal-block estimate so the
    // stitching model (near-identity diagonal blocks) applies, then undo.
    let dv_inv_half = psd_inv_sqrt(&block.sigma_v)?;
    let dw_inv_half = psd_inv_sqrt(&block.sigma_w)?;
    let whiten = block.v.basis() * &dv_inv_half * block.v.basis().transpose()
        + block.w.basis() * &dw_inv_half * block.w.basis().transpose();
    let fresh_white = fresh * whiten.transpose();

    let eta = (xi / 2.0).max(epsilon);
    let stitched = stitching(
        &block.v,
        &block.w,
        eta,
        xi,
        epsilon,
        &fresh_white,
        tau,
        caps.stitch_m,
        seed ^ 0x5717c4,
    )?;
    let unwhiten = block.v.basis() * psd_sqrt(&block.sigma_v)? * block.v.basis().transpose()
        + block.w.basis() * psd_sqrt(&block.sigma_w)? * block.w.basis().transpose();
    let estimate = &unwhiten * stitched * unwhiten.transpose();
    Ok(FilterOutcome::Estimate(estimate))
}

/// Covariance estimate together with its filtering trace.
#[derive(Debug, Clone)]
pub struct CovEstimate {
    pub covariance: Matrix,
    pub trace: RunTrace,
}

/// Full covariance recovery for mean-zero inliers: a single-polynomial
/// eigen-filter initializer brings the Mahalanobis error to
/// `O(eps ln 1/eps)`, then whitened [`improve_cov`] rounds halve the
/// Frobenius error (or shrink the set) down to the `O(eps)` floor.
pub fn recover_cov(
    samples: &Samples,
    epsilon: f64,
    delta: f64,
    caps: &Caps,
    seed: u64,
) -> Result<CovEstimate> {
    let n = samples.nrows();
    let d = samples.ncols();
    if n < 4 * STITCH_MIN_SAMPLES {
        return Err(Error::InsufficientSamples(format!(
            "covariance recovery needs at least {} samples",
            4 * STITCH_MIN_SAMPLES
        )));
    }
    // one up-front split: the contraction rounds reuse the same fresh slice
    let split = (n as f64 * 0.7) as usize;
    let work_rows: Vec<usize> = (0..split).collect();
    let fresh_rows: Vec<usize> = (split..n).collect();
    let fresh = select_rows(samples, &fresh_rows);

    let mut trace = RunTrace::default();
    let mut active = work_rows;

    // initializer: iterated single-quadratic filter on whitened data
    loop {
        let current = select_rows(samples, &active);
        let moment = second_moment(&current)?;
        let white = psd_inv_sqrt(&moment)?;
        let z = &current * white.transpose();
        let op = quadratic_second_moment_operator(&z);
        let basis = PolySubspace::quadratics_on(&Subspace::full(d));
        let (m_top, _) = top_variance_poly(&op, basis.basis())?;
        let poly = QuadraticPoly::new(m_top)?;
        let vals = poly.evaluate_rows(&z);
        let na = active.len() as f64;
        let second: f64 = vals.iter().map(|v| v * v).sum::<f64>() / na;
        let allowance = 3.0 * (60.0 / na).sqrt();
        if second - 1.0 <= C_INIT_COV * epsilon * ln_inv(epsilon).min(1e12) + allowance {
            break;
        }
        // scalar tail filter on |p|
        let eps_eff = epsilon.max(1.0 / na);
        let scores: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
        let smax = scores.iter().copied().fold(f64::MIN, f64::max);
        let cushion = eps_eff / (d as f64 * (na / delta).ln());
        let mut t = 4.0 * (6.0 / eps_eff).ln();
        let mut accepted = None;
        while t < smax {
            let tail = scores.iter().filter(|&&s| s > t).count() as f64 / na;
            if tail > 6.0 * (-t / 4.0).exp() + cushion {
                accepted = Some(t);
                break;
            }
            t *= 1.07;
        }
        let Some(t) = accepted else { break };
        let survivors: Vec<usize> = active
            .iter()
            .zip(&scores)
            .filter(|(_, &s)| s <= t)
            .map(|(&r, _)| r)
            .collect();
        if survivors.len() == active.len() || survivors.is_empty() {
            break;
        }
        active = survivors;
        trace.kept_rounds.push(active.clone());
        if trace.kept_rounds.len() > n {
            return Err(Error::Internal("initializer exceeded its budget".into()));
        }
    }

    let mut whitener = psd_sqrt(&second_moment(&select_rows(samples, &active))?)?;
    let floor = C_COV_FLOOR * epsilon;
    let mut xi = (XI0_COV * epsilon * ln_inv(epsilon).min(1e12)).max(floor);
    let mut round = 0usize;
    loop {
        round += 1;
        if round > n + 64 {
            return Err(Error::Internal("contraction exceeded its budget".into()));
        }
        let inv_half = whitener
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Internal("degenerate whitener".into()))?;
        let work_white = select_rows(samples, &active) * inv_half.transpose();
        let fresh_white = &fresh * inv_half.transpose();
        match improve_cov(
            &work_white,
            &fresh_white,
            xi,
            epsilon,
            delta,
            caps,
            seed.wrapping_add(round as u64),
        )? {
            FilterOutcome::Filtered(kept_local) => {
                active = kept_local.iter().map(|&i| active[i]).collect();
                trace.kept_rounds.push(active.clone());
            }
            FilterOutcome::Estimate(sigma_r) => {
                whitener = &whitener * psd_sqrt(&sigma_r)?;
                if xi <= floor {
                    break;
                }
                xi = (xi / 2.0).max(floor);
            }
            FilterOutcome::SubspaceOk(_) => unreachable!(),
        }
    }
    Ok(CovEstimate {
        covariance: &whitener * whitener.transpose(),
        trace,
    })
}

/// `E_S[g g^T]/2` for `g = (x x^T - I)^flat`: the quadratic form giving
/// `E_S[p^2]` for associated polynomials.
fn quadratic_second_moment_operator(samples: &Samples) -> Matrix {
    let n = samples.nrows();
    let d = samples.ncols();
    let rows: Vec<usize> = if n > OPERATOR_ROW_CAP {
        let stride = n as f64 / OPERATOR_ROW_CAP as f64;
        (0..OPERATOR_ROW_CAP)
            .map(|i| ((i as f64) * stride) as usize)
            .collect()
    } else {
        (0..n).collect()
    };
    let dd = d * d;
    let mut op = Matrix::zeros(dd, dd);
    let mut g = DVector::zeros(dd);
    for &r in &rows {
        let x = samples.row(r);
        for i in 0..d {
            for j in 0..d {
                g[i * d + j] = x[i] * x[j] - if i == j { 1.0 } else { 0.0 };
            }
        }
        op.syger(0.5 / rows.len() as f64, &g, &g, 1.0);
    }
    for i in 0..dd {
        for j in (i + 1)..dd {
            op[(i, j)] = op[(j, i)];
        }
    }
    op
}

/// Mahalanobis-style covariance error `|A^{-1/2} B A^{-1/2} - I|_F`.
pub fn mahalanobis_error(estimate: &Matrix, truth: &Matrix) -> Result<f64> {
    let inv_half = psd_inv_sqrt(estimate)?;
    let d = estimate.nrows();
    Ok((&inv_half * truth * &inv_half - Matrix::identity(d, d)).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contamination::{corrupt, delta_ledger, AdversaryStrategy};
    use crate::gaussian::{sample_gaussian, GaussianParams};
    use rand::Rng;

    fn spiked_cov(d: usize, rank: usize, scale: f64, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pert = Matrix::zeros(d, d);
        let mut dirs: Vec<Vector> = Vec::new();
        while dirs.len() < rank {
            let mut v = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
            for u in &dirs {
                let c = u.dot(&v);
                v -= u * c;
            }
            if v.norm() > 1e-6 {
                let n = v.norm();
                dirs.push(v / n);
            }
        }
        for v in &dirs {
            pert += v * v.transpose() * (scale / (rank as f64).sqrt());
        }
        Matrix::identity(d, d) + pert
    }

    #[test]
    fn deg2_clean_reports_empty() {
        let s = sample_gaussian(&GaussianParams::standard(20), 100_000, 1).unwrap();
        match filter_cov_many_deg2_eig(&s, 0.05, 0.1, 0.05).unwrap() {
            FilterOutcome::SubspaceOk(v) => assert_eq!(v.dim(), 0),
            other => panic!("expected SubspaceOk, got {other:?}"),
        }
    }

    #[test]
    fn deg2_many_inflated_directions_filter() {
        let d = 16;
        let eps = 0.1;
        let clean = sample_gaussian(&GaussianParams::standard(d), 30_000, 2).unwrap();
        let strategy = AdversaryStrategy::VarianceInflation {
            distance: 8.0,
            directions: 10,
        };
        let out = corrupt(&clean, eps, &strategy, 3).unwrap();
        let xi = 0.2;
        match filter_cov_many_deg2_eig(&out.samples, eps, xi, 0.05).unwrap() {
            FilterOutcome::Filtered(kept) => {
                let before = delta_ledger(&out, &(0..out.n()).collect::<Vec<_>>()).unwrap();
                let after = delta_ledger(&out, &kept).unwrap();
                assert!(after.delta < before.delta, "{} -> {}", before.delta, after.delta);
            }
            other => panic!("expected Filtered, got {other:?}"),
        }
    }

    #[test]
    fn deg2_two_inflated_directions_subspace() {
        let d = 12;
        let eps = 0.1;
        let clean = sample_gaussian(&GaussianParams::standard(d), 30_000, 4).unwrap();
        let strategy = AdversaryStrategy::VarianceInflation {
            distance: 8.0,
            directions: 2,
        };
        let out = corrupt(&clean, eps, &strategy, 5).unwrap();
        match filter_cov_many_deg2_eig(&out.samples, eps, 0.2, 0.05).unwrap() {
            FilterOutcome::SubspaceOk(v) => assert_eq!(v.dim(), 2),
            other => panic!("expected SubspaceOk, got {other:?}"),
        }
    }

    #[test]
    fn deg4_clean_empty_basis() {
        let d = 8;
        let s = sample_gaussian(&GaussianParams::standard(d), 40_000, 6).unwrap();
        let w = Subspace::full(d);
        match filter_cov_many_deg4_eig(&s, 0.05, 0.3, 0.05, &w, 4).unwrap() {
            Deg4Outcome::BasisOk(b) => assert!(b.is_empty(), "basis size {}", b.len()),
            Deg4Outcome::Filtered(_) => panic!("clean data must not be filtered"),
        }
    }

    #[test]
    fn deg4_many_inflated_quadratics_filter() {
        let d = 10;
        let eps = 0.05;
        let clean = sample_gaussian(&GaussianParams::standard(d), 40_000, 7).unwrap();
        let strategy = AdversaryStrategy::VarianceInflation {
            distance: 6.0,
            directions: 8,
        };
        let out = corrupt(&clean, eps, &strategy, 8).unwrap();
        let w = Subspace::full(d);
        // deliberately small eigen budget: variance inflation at 6 sigma is
        // visible to the fourth moment at xi = 0.3
        match filter_cov_many_deg4_eig(&out.samples, eps, 0.3, 0.05, &w, 4).unwrap() {
            Deg4Outcome::Filtered(kept) => {
                let labels = out.labels.as_ref().unwrap();
                let removed: Vec<usize> = (0..out.n()).filter(|r| !kept.contains(r)).collect();
                let bad = removed
                    .iter()
                    .filter(|&&r| labels[r] == crate::contamination::Label::Adversarial)
                    .count();
                let good = removed.len() - bad;
                assert!(
                    bad as f64 >= (1.0f64 / eps).ln() * good.max(1) as f64,
                    "bad {bad} good {good}"
                );
                let before = delta_ledger(&out, &(0..out.n()).collect::<Vec<_>>()).unwrap();
                let after = delta_ledger(&out, &kept).unwrap();
                assert!(after.delta < before.delta);
            }
            other => {
                let n = match other {
                    Deg4Outcome::BasisOk(b) => b.len(),
                    _ => unreachable!(),
                };
                panic!("expected Filtered, got basis of size {n}");
            }
        }
    }

    #[test]
    fn deg4_single_direction_returns_basis() {
        let d = 8;
        let eps = 0.05;
        let clean = sample_gaussian(&GaussianParams::standard(d), 40_000, 9).unwrap();
        let strategy = AdversaryStrategy::VarianceInflation {
            distance: 6.0,
            directions: 1,
        };
        let out = corrupt(&clean, eps, &strategy, 10).unwrap();
        let w = Subspace::full(d);
        match filter_cov_many_deg4_eig(&out.samples, eps, 0.3, 0.05, &w, 4).unwrap() {
            Deg4Outcome::BasisOk(b) => {
                assert_eq!(b.len(), 1, "basis size {}", b.len());
                // Gram identity within 1e-8
                assert!((b[0].matrix().norm() - 1.0).abs() < 1e-8);
            }
            Deg4Outcome::Filtered(_) => panic!("single direction must not reach the filter"),
        }
    }

    #[test]
    fn conditional_mean_matches_block_algebra() {
        // mu_v = (Sigma^{-1} + I_V)^{-1} v, and M = A/2 + O(eta + xi^2)
        let d = 6;
        let kv = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let eta: f64 = rng.random_range(0.0..0.05);
            let mut sigma = Matrix::identity(d, d);
            // diagonal blocks I + O(eta), off-diagonal block A
            for i in 0..d {
                for j in 0..=i {
                    let bump: f64 = rng.random_range(-1.0..1.0) * eta / d as f64;
                    sigma[(i, j)] += bump;
                    if i != j {
                        sigma[(j, i)] += bump;
                    }
                }
            }
            let mut a = Matrix::zeros(d - kv, kv);
            for i in 0..(d - kv) {
                for j in 0..kv {
                    a[(i, j)] = rng.random_range(-1.0..1.0) * 0.05;
                }
            }
            for i in 0..(d - kv) {
                for j in 0..kv {
                    sigma[(kv + i, j)] += a[(i, j)];
                    sigma[(j, kv + i)] += a[(i, j)];
                }
            }
            let v = Subspace::new({
                let mut b = Matrix::zeros(d, kv);
                b[(0, 0)] = 1.0;
                b[(1, 1)] = 1.0;
                b
            })
            .unwrap();
            let vec = DVector::from_fn(d, |i, _| if i < kv { rng.random_range(-2.0..2.0) } else { 0.0 });
            let mu = conditional_mean_exact(&sigma, &v, &vec).unwrap();
            // closed form via explicit matrices
            let tilted = sigma.clone().try_inverse().unwrap() + v.projector();
            let expect = tilted.try_inverse().unwrap() * &vec;
            assert!((mu.clone() - expect).norm() < 1e-10);

            // W-part of the map is A/2 up to O(eta + |A|^2)
            let xi2 = a.norm() * a.norm();
            let mut worst = 0.0f64;
            for j in 0..kv {
                let mut unit = DVector::zeros(d);
                unit[j] = 1.0;
                let m = conditional_mean_exact(&sigma, &v, &unit).unwrap();
                for i in 0..(d - kv) {
                    worst = worst.max((m[kv + i] - a[(i, j)] / 2.0).abs());
                }
            }
            assert!(
                worst <= 5.0 * (eta + xi2) + 1e-9,
                "remainder {worst} vs {}",
                5.0 * (eta + xi2)
            );
        }
    }

    #[test]
    fn rejection_acceptance_rate() {
        // clean data at |v| <= 2: acceptance ~ 2^{-dim(V)/2} e^{-|v|^2/4},
        // within a factor of 2 of the coarser 2^{-dim(V)} e^{-|v|^2/4} form
        let d = 4;
        let n = 200_000;
        let s = sample_gaussian(&GaussianParams::standard(d), n, 12).unwrap();
        let v = Subspace::new({
            let mut b = Matrix::zeros(d, 1);
            b[(0, 0)] = 1.0;
            b
        })
        .unwrap();
        let xv = v.coords(&s);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for vnorm in [0.5f64, 1.0, 2.0] {
            let cond = DVector::from_element(1, vnorm);
            let mut accepted = 0usize;
            for r in 0..n {
                let dist2 = (xv.row(r).transpose() - &cond).norm_squared();
                if rng.random::<f64>() < (-dist2 / 2.0).exp() {
                    accepted += 1;
                }
            }
            let rate = accepted as f64 / n as f64;
            let exact = (0.5f64).sqrt() * (-vnorm * vnorm / 4.0).exp();
            assert!(
                (rate / exact - 1.0).abs() < 0.05,
                "rate {rate} vs exact {exact}"
            );
            let coarse = 0.5 * (-vnorm * vnorm / 4.0).exp();
            assert!(rate / coarse <= 2.0 + 0.1 && rate / coarse >= 0.5 - 0.05);
        }
    }

    #[test]
    fn stitching_block_diagonal_truth() {
        // A = 0: recovered off-diagonal stays small
        let d = 6;
        let kv = 2;
        let params = GaussianParams::standard(d);
        let fresh = sample_gaussian(&params, 60_000, 14).unwrap();
        let v = Subspace::new({
            let mut b = Matrix::zeros(d, kv);
            b[(0, 0)] = 1.0;
            b[(1, 1)] = 1.0;
            b
        })
        .unwrap();
        let w = v.complement();
        let eta = 0.02;
        let sigma0 = stitching(&v, &w, eta, 0.05, 0.01, &fresh, 0.1, 128, 15).unwrap();
        let off = v.basis().transpose() * &sigma0 * w.basis();
        assert!(off.norm() <= 3.0 * eta, "off-block norm {}", off.norm());
    }

    #[test]
    fn improve_cov_clean_contracts() {
        let d = 12;
        let sigma = spiked_cov(d, 3, 0.1, 16);
        let params = GaussianParams::new(DVector::zeros(d), sigma.clone()).unwrap();
        let s = sample_gaussian(&params, 120_000, 17).unwrap();
        let work = s.view((0, 0), (80_000, d)).into_owned();
        let fresh = s.view((80_000, 0), (40_000, d)).into_owned();
        let xi = 0.12;
        match improve_cov(&work, &fresh, xi, 0.0, 0.05, &Caps::default(), 18).unwrap() {
            FilterOutcome::Estimate(est) => {
                let err = (est - &sigma).norm();
                assert!(err <= xi / 2.0 + 0.03, "error {err}");
            }
            other => panic!("expected Estimate, got {other:?}"),
        }
    }

    #[test]
    fn improve_cov_identity_noise_floor() {
        let d = 10;
        let s = sample_gaussian(&GaussianParams::standard(d), 100_000, 19).unwrap();
        let work = s.view((0, 0), (70_000, d)).into_owned();
        let fresh = s.view((70_000, 0), (30_000, d)).into_owned();
        match improve_cov(&work, &fresh, 0.1, 0.0, 0.05, &Caps::default(), 20).unwrap() {
            FilterOutcome::Estimate(est) => {
                let err = (est - Matrix::identity(d, d)).norm();
                assert!(err <= 0.05, "error {err}");
            }
            other => panic!("expected Estimate, got {other:?}"),
        }
    }

    #[test]
    fn improve_cov_adversarial_filters_with_ledger_gain() {
        let d = 12;
        let eps = 0.1;
        let clean = sample_gaussian(&GaussianParams::standard(d), 30_000, 21).unwrap();
        let strategy = AdversaryStrategy::VarianceInflation {
            distance: 8.0,
            directions: 10,
        };
        let out = corrupt(&clean, eps, &strategy, 22).unwrap();
        let fresh = sample_gaussian(&GaussianParams::standard(d), 10_000, 23).unwrap();
        match improve_cov(&out.samples, &fresh, 0.2, eps, 0.05, &Caps::default(), 24).unwrap() {
            FilterOutcome::Filtered(kept) => {
                let before = delta_ledger(&out, &(0..out.n()).collect::<Vec<_>>()).unwrap();
                let after = delta_ledger(&out, &kept).unwrap();
                assert!(after.delta < before.delta);
            }
            other => panic!("expected Filtered, got {other:?}"),
        }
    }

    #[test]
    fn recover_cov_clean_and_scaling() {
        let d = 8;
        let n = 120_000;
        let s = sample_gaussian(&GaussianParams::standard(d), n, 25).unwrap();
        let est = recover_cov(&s, 0.0, 0.05, &Caps::default(), 26).unwrap();
        let err = mahalanobis_error(&est.covariance, &Matrix::identity(d, d)).unwrap();
        assert!(err <= 0.05, "clean error {err}");

        // scaling equivariance: Sigma = 4I gives ~4x the whitened output
        let scaled = &s * 2.0;
        let est4 = recover_cov(&scaled, 0.0, 0.05, &Caps::default(), 26).unwrap();
        let ratio = (est4.covariance / 4.0 - &est.covariance).norm();
        assert!(ratio <= 0.05, "scaling residual {ratio}");
    }

    #[test]
    fn recover_cov_beats_empirical_under_inflation() {
        let d = 8;
        let eps = 0.05;
        let clean = sample_gaussian(&GaussianParams::standard(d), 80_000, 27).unwrap();
        let strategy = AdversaryStrategy::VarianceInflation {
            distance: 7.0,
            directions: 3,
        };
        let out = corrupt(&clean, eps, &strategy, 28).unwrap();
        let est = recover_cov(&out.samples, eps, 0.05, &Caps::default(), 29).unwrap();
        let truth = Matrix::identity(d, d);
        let robust = mahalanobis_error(&est.covariance, &truth).unwrap();
        let naive = mahalanobis_error(&second_moment(&out.samples).unwrap(), &truth).unwrap();
        assert!(
            robust <= 8.0 * eps,
            "robust {robust} above the eps budget"
        );
        assert!(robust < naive, "robust {robust} vs naive {naive}");
    }
}
