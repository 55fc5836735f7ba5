//! Degree-2 polynomial machinery: associated quadratics, covers of
//! polynomial subspaces, the Hermite harmonic split of squared quadratics,
//! concentration-bound evaluators, and low-dimensional covariance recovery
//! from robust chi-squared mean estimates.

use nalgebra::DVector;

use crate::constants::{
    A_HYPERCONTRACTIVE, C0_HANSON_WRIGHT, CHI2_MC_CAP, C_CHI2_ERR, C_HYPERCONTRACTIVE,
    POLY_COVER_CAP,
};
use crate::error::{Error, Result};
use crate::gaussian::{sym_eigendecomp, Subspace};
use crate::lowdim::greedy_sphere_cover;
use crate::univariate::{chi2_mc_samples, learn_mean_chi_squared};
use crate::{Matrix, Samples, Vector};

/// Even degree-2 polynomial `p(x) = (x^T M x - tr M)/sqrt(2)` represented by
/// its symmetric unit-Frobenius matrix. Unit variance under `N(0, I)`.
#[derive(Debug, Clone)]
pub struct QuadraticPoly {
    matrix: Matrix,
}

impl QuadraticPoly {
    /// Validates symmetry and `|M|_F = 1` within 1e-9.
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::InvalidInput("matrix must be square".into()));
        }
        if (&matrix - matrix.transpose()).norm() > 1e-9 * matrix.norm().max(1.0) {
            return Err(Error::InvalidInput("matrix must be symmetric".into()));
        }
        if (matrix.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "matrix must have unit Frobenius norm, got {}",
                matrix.norm()
            )));
        }
        Ok(Self { matrix })
    }

    /// Symmetrizes and normalizes before constructing.
    pub fn from_matrix_normalized(matrix: Matrix) -> Result<Self> {
        let sym = (&matrix + matrix.transpose()) * 0.5;
        let norm = sym.norm();
        if norm < 1e-12 {
            return Err(Error::InvalidInput("zero matrix".into()));
        }
        Self::new(sym / norm)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn evaluate(&self, x: &Vector) -> f64 {
        (x.dot(&(&self.matrix * x)) - self.matrix.trace()) / std::f64::consts::SQRT_2
    }

    /// Evaluates over all rows of a sample matrix.
    pub fn evaluate_rows(&self, samples: &Samples) -> Vector {
        let prod = samples * &self.matrix; // n x d
        let tr = self.matrix.trace();
        DVector::from_fn(samples.nrows(), |r, _| {
            (prod.row(r).dot(&samples.row(r)) - tr) / std::f64::consts::SQRT_2
        })
    }

    /// Eigenvalues of `M` (so `p(X) = sum a_i (Z_i^2 - 1)/sqrt(2)` under
    /// `N(0, I)`).
    pub fn eigenvalues(&self) -> Result<Vector> {
        Ok(sym_eigendecomp(&self.matrix)?.0)
    }
}

/// Subspace of even degree-2 polynomials, as symmetric matrices orthonormal
/// under the trace inner product (equivalently orthonormal polynomials under
/// the Gaussian inner product).
#[derive(Debug, Clone)]
pub struct PolySubspace {
    basis: Vec<Matrix>,
}

impl PolySubspace {
    pub fn new(basis: Vec<Matrix>) -> Result<Self> {
        for (i, a) in basis.iter().enumerate() {
            if (a - a.transpose()).norm() > 1e-9 * a.norm().max(1.0) {
                return Err(Error::InvalidInput("basis matrix not symmetric".into()));
            }
            for (j, b) in basis.iter().enumerate() {
                let ip = a.dot(b);
                let expect = if i == j { 1.0 } else { 0.0 };
                if (ip - expect).abs() > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "basis not orthonormal: <{i},{j}> = {ip}"
                    )));
                }
            }
        }
        Ok(Self { basis })
    }

    pub fn empty() -> Self {
        Self { basis: Vec::new() }
    }

    pub fn basis(&self) -> &[Matrix] {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// All quadratics supported on a spatial subspace `V`: for orthonormal
    /// columns `v_i`, the matrices `v_i v_i^T` and
    /// `(v_i v_j^T + v_j v_i^T)/sqrt(2)`.
    pub fn quadratics_on(subspace: &Subspace) -> Self {
        let b = subspace.basis();
        let k = subspace.dim();
        let mut basis = Vec::with_capacity(k * (k + 1) / 2);
        for i in 0..k {
            let vi = b.column(i);
            basis.push(&vi * vi.transpose());
        }
        for i in 0..k {
            for j in (i + 1)..k {
                let vi = b.column(i);
                let vj = b.column(j);
                let m = (&vi * vj.transpose() + &vj * vi.transpose())
                    * std::f64::consts::FRAC_1_SQRT_2;
                basis.push(m);
            }
        }
        Self { basis }
    }

    /// Projection of a symmetric matrix onto the span.
    pub fn project(&self, m: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(m.nrows(), m.ncols());
        for b in &self.basis {
            out += b * b.dot(m);
        }
        out
    }
}

/// `1/2`-cover of the unit sphere of a polynomial subspace: every
/// unit-Frobenius matrix in the span is within Frobenius distance 1/2 of
/// some element. Size grows as `c^dim`.
pub fn poly_cover(w: &PolySubspace) -> Result<Vec<QuadraticPoly>> {
    let dim = w.dim();
    if dim == 0 {
        return Ok(Vec::new());
    }
    if dim > POLY_COVER_CAP {
        return Err(Error::InvalidInput(format!(
            "polynomial subspace dimension {dim} above cover cap {POLY_COVER_CAP}"
        )));
    }
    let probe_budget = (crate::constants::NET_PROBE_BUDGET >> dim.saturating_sub(4)).max(10_000);
    let coeffs = greedy_sphere_cover(dim, 0.5, probe_budget);
    let d = w.basis()[0].nrows();
    let mut out = Vec::with_capacity(coeffs.len());
    for c in coeffs {
        let mut m = Matrix::zeros(d, d);
        for (i, b) in w.basis().iter().enumerate() {
            m += b * c[i];
        }
        out.push(QuadraticPoly::from_matrix_normalized(m)?);
    }
    Ok(out)
}

/// Degree-4 harmonic component `Q(x) = sum_i (p_i^2 - r_i)(x)` of a sum of
/// squared quadratics, stored by its sources (the `d^4` tensor is never
/// materialized; the Gaussian L2 norm comes from closed-form contractions).
#[derive(Debug, Clone)]
pub struct QuarticHarmonic {
    parts: Vec<QuarticPart>,
}

#[derive(Debug, Clone)]
struct QuarticPart {
    poly: QuadraticPoly,
    m_squared: Matrix,
    m_squared_trace: f64,
    constant: f64,
}

impl QuarticHarmonic {
    pub fn from_polys(polys: &[QuadraticPoly]) -> Self {
        let parts = polys
            .iter()
            .map(|p| {
                let m2 = p.matrix() * p.matrix();
                let tr = m2.trace();
                QuarticPart {
                    poly: p.clone(),
                    m_squared: m2,
                    m_squared_trace: tr,
                    constant: p.matrix().norm_squared(),
                }
            })
            .collect();
        Self { parts }
    }

    pub fn sources(&self) -> Vec<&QuadraticPoly> {
        self.parts.iter().map(|p| &p.poly).collect()
    }

    pub fn evaluate(&self, x: &Vector) -> f64 {
        self.parts
            .iter()
            .map(|part| {
                let p = part.poly.evaluate(x);
                let r = part.constant
                    + 2.0 * (x.dot(&(&part.m_squared * x)) - part.m_squared_trace);
                p * p - r
            })
            .sum()
    }

    /// Gaussian L2 norm `E_{N(0,I)}[Q^2]^{1/2}`, via the tensor Frobenius
    /// norm of `sqrt(6) sum Sym(A_i (x) A_i)`.
    pub fn l2_norm(&self) -> f64 {
        let polys: Vec<QuadraticPoly> = self.parts.iter().map(|p| p.poly.clone()).collect();
        quartic_norm(&polys)
    }
}

/// Splits `p^2` into its degree-4 harmonic part `q` and the lower-degree
/// remainder `r`, returned as the matrix of the associated harmonic
/// quadratic (`2 sqrt(2) M^2`) and the constant (`|M|_F^2 = 1`), so that
/// `r(x) = c + (x^T B x - tr B)/sqrt(2)` and `p^2 = q + r` pointwise.
pub fn harmonic_split(p: &QuadraticPoly) -> (QuarticHarmonic, (Matrix, f64)) {
    let q = QuarticHarmonic::from_polys(std::slice::from_ref(p));
    let b = (p.matrix() * p.matrix()) * (2.0 * std::f64::consts::SQRT_2);
    (q, (b, p.matrix().norm_squared()))
}

/// Gaussian L2 norm of `Q = sum (p_i^2)^{[4]}` from the closed-form tensor
/// contraction
/// `|T|^2 = 6 sum_{ij} (<A_i,A_j>^2 + 2 tr((A_i A_j)^2)) / 3`.
pub fn quartic_norm(polys: &[QuadraticPoly]) -> f64 {
    let mut total = 0.0;
    for a in polys {
        for b in polys {
            let ip = a.matrix().dot(b.matrix());
            let ab = a.matrix() * b.matrix();
            let tr_sq = (&ab * &ab).trace();
            total += 2.0 * (ip * ip + 2.0 * tr_sq);
        }
    }
    total.max(0.0).sqrt()
}

/// Hanson-Wright tail bound
/// `2 exp(-c0 min(t^2/|A|_F^2, t/|A|_2))` with the frozen `c0`.
pub fn hanson_wright_bound(a: &Matrix, t: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::InvalidInput("deviation must be nonnegative".into()));
    }
    if t == 0.0 {
        return Ok(2.0);
    }
    let frob = a.norm();
    let (eigs, _) = sym_eigendecomp(a)?;
    let spec = eigs[0].abs().max(eigs[eigs.len() - 1].abs());
    if frob == 0.0 || spec == 0.0 {
        return Ok(0.0);
    }
    let exponent = (t * t / (frob * frob)).min(t / spec);
    Ok(2.0 * (-C0_HANSON_WRIGHT * exponent).exp())
}

/// Hypercontractive degree-4 tail bound `exp(-A sqrt(t))` for deviations of
/// `t >= C` (in units of the L2 norm); vacuous (1) below the onset.
pub fn hypercontractive_tail_bound(t: f64) -> f64 {
    if t < C_HYPERCONTRACTIVE {
        1.0
    } else {
        (-A_HYPERCONTRACTIVE * t.sqrt()).exp()
    }
}

/// Orthogonality-constrained second subspace of [`learn_mean_poly_low_d`].
#[derive(Debug, Clone)]
pub enum PolyWindow {
    /// No second subspace (`xi` unused).
    Empty,
    /// Explicit orthonormal basis.
    Explicit(PolySubspace),
    /// All quadratics supported on `within`, excluding `exclude`.
    ComplementIn {
        within: Subspace,
        exclude: PolySubspace,
    },
}

impl PolyWindow {
    /// Projection of a symmetric matrix onto the window.
    fn project(&self, m: &Matrix) -> Option<Matrix> {
        match self {
            PolyWindow::Empty => None,
            PolyWindow::Explicit(sub) => Some(sub.project(m)),
            PolyWindow::ComplementIn { within, exclude } => {
                let pw = within.projector();
                let restricted = &pw * m * &pw;
                Some(&restricted - exclude.project(&restricted))
            }
        }
    }
}

/// Tunables of the low-dimensional covariance learner.
#[derive(Debug, Clone, Copy)]
pub struct PolyLearnOptions {
    /// A-priori bound on `|Sigma - I|_F` in the calling regime.
    pub frob_bound: f64,
    /// Improvement factor `C`; `None` picks `frob_bound/(eps/2)` clamped to
    /// `[2, 50]`, balancing `frob/C` against `ln(C) eps`.
    pub improvement: Option<f64>,
    /// Cap on Monte-Carlo tail samples per cover element.
    pub mc_cap: usize,
}

impl Default for PolyLearnOptions {
    fn default() -> Self {
        Self {
            frob_bound: 0.5,
            improvement: None,
            mc_cap: CHI2_MC_CAP,
        }
    }
}

impl PolyLearnOptions {
    fn pick_c(&self, epsilon: f64) -> f64 {
        self.improvement.unwrap_or_else(|| {
            (self.frob_bound / (0.5 * epsilon.max(1e-6))).clamp(2.0, 50.0)
        })
    }
}

/// Finds a matrix agreeing with the truth on every polynomial in
/// `span(W1 u W2) /\ P_2`: robustly estimates the mean of each element of a
/// 1/2-cover of `W1` with per-element failure budget `tau/|cover|`, forms
/// the induced linear slab constraints plus the `W2` ball constraint around
/// `sigma_hat`, and returns a feasible point by alternating projection.
///
/// Contract: `|E_{Sigma'}[p] - E_{Sigma}[p]| <= 4(|Sigma-I|_F/C +
/// O(log C * eps)) + xi` on the span, with probability `1 - tau`.
#[allow(clippy::too_many_arguments)]
pub fn learn_mean_poly_low_d(
    samples: &Samples,
    epsilon: f64,
    w1: &PolySubspace,
    w2: &PolyWindow,
    sigma_hat: &Matrix,
    xi: f64,
    tau: f64,
    options: &PolyLearnOptions,
    seed: u64,
) -> Result<Matrix> {
    let d = sigma_hat.nrows();
    if w1.dim() == 0 {
        return Ok(sigma_hat.clone());
    }
    let cover = poly_cover(w1)?;
    let tau_each = (tau / cover.len() as f64).max(1e-12);
    let c = options.pick_c(epsilon);
    let m_mc = chi2_mc_samples(epsilon, tau_each).min(options.mc_cap);
    let mc_slack = 3.0 / (m_mc as f64).sqrt();
    let bound = options.frob_bound / c + C_CHI2_ERR * c.ln() * epsilon + mc_slack;

    let mut targets = Vec::with_capacity(cover.len());
    for (i, p) in cover.iter().enumerate() {
        let est = learn_mean_chi_squared_capped(
            samples,
            p,
            epsilon,
            c,
            tau_each,
            options.mc_cap,
            seed.wrapping_add(i as u64),
        )?;
        targets.push(est);
    }

    // Alternating projection onto the per-polynomial slabs and the W2 ball.
    let mut sigma = sigma_hat.clone();
    let sqrt2 = std::f64::consts::SQRT_2;
    let tol = 1e-10;
    let mut feasible = false;
    for _ in 0..2_000 {
        let mut worst: f64 = 0.0;
        for (p, &target) in cover.iter().zip(&targets) {
            let value =
                (p.matrix().dot(&sigma) - p.matrix().trace()) / sqrt2;
            let clamped = value.clamp(target - bound, target + bound);
            let move_by = clamped - value;
            if move_by != 0.0 {
                sigma += p.matrix() * (move_by * sqrt2);
                worst = worst.max(move_by.abs());
            }
        }
        if let Some(overlap) = w2.project(&(&sigma - sigma_hat)) {
            let norm = overlap.norm();
            if norm > xi {
                let scale = (norm - xi) / norm;
                sigma -= overlap * scale;
                worst = worst.max(norm - xi);
            }
        }
        if worst <= tol {
            feasible = true;
            break;
        }
    }
    if !feasible {
        return Err(Error::GoodnessViolated(
            "no covariance matrix satisfies the robust polynomial constraints".into(),
        ));
    }
    let _ = d;
    Ok(sigma)
}

fn learn_mean_chi_squared_capped(
    samples: &Samples,
    p: &QuadraticPoly,
    epsilon: f64,
    c: f64,
    tau: f64,
    mc_cap: usize,
    seed: u64,
) -> Result<f64> {
    if mc_cap >= CHI2_MC_CAP {
        return learn_mean_chi_squared(samples, p, epsilon, c, tau, seed);
    }
    // emulate a smaller cap by raising the effective epsilon for the MC
    // budget only (the truncation and averaging are unchanged)
    let m_wanted = chi2_mc_samples(epsilon, tau);
    if m_wanted <= mc_cap {
        return learn_mean_chi_squared(samples, p, epsilon, c, tau, seed);
    }
    let eps_eff = (crate::constants::KAPPA_M * (2.0 / tau).ln() / mc_cap as f64).sqrt();
    learn_mean_chi_squared(samples, p, eps_eff.max(epsilon), c, tau, seed)
}

/// Robust covariance on a spatial subspace of dimension at most 4:
/// [`learn_mean_poly_low_d`] with `W1` = all quadratics supported on `V` and
/// no second window. The returned matrix is the identity off `V`.
pub fn learn_cov_low_dim(
    samples: &Samples,
    epsilon: f64,
    xi: f64,
    tau: f64,
    subspace: &Subspace,
    options: &PolyLearnOptions,
    seed: u64,
) -> Result<Matrix> {
    let d = subspace.ambient_dim();
    if subspace.dim() == 0 {
        return Ok(Matrix::identity(d, d));
    }
    if subspace.dim() > crate::constants::LOWDIM_COV_CAP {
        return Err(Error::InvalidInput(format!(
            "subspace dimension {} above covariance cap {}",
            subspace.dim(),
            crate::constants::LOWDIM_COV_CAP
        )));
    }
    let w1 = PolySubspace::quadratics_on(subspace);
    let mut opts = *options;
    opts.frob_bound = options.frob_bound.max(xi);
    learn_mean_poly_low_d(
        samples,
        epsilon,
        &w1,
        &PolyWindow::Empty,
        &Matrix::identity(d, d),
        0.0,
        tau,
        &opts,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{psd_sqrt, sample_gaussian, GaussianParams};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_unit_sym(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let mut m = Matrix::zeros(d, d);
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

    #[test]
    fn quadratic_poly_validation() {
        let m = Matrix::identity(2, 2);
        assert!(QuadraticPoly::new(m.clone()).is_err()); // norm sqrt(2)
        let p = QuadraticPoly::from_matrix_normalized(m).unwrap();
        assert_relative_eq!(p.matrix().norm(), 1.0, epsilon = 1e-12);
        let x = DVector::from_row_slice(&[1.0, 2.0]);
        // p(x) = (|x|^2/sqrt2 - 2/sqrt2)/sqrt2
        assert_relative_eq!(
            p.evaluate(&x),
            (5.0 / std::f64::consts::SQRT_2 - std::f64::consts::SQRT_2)
                / std::f64::consts::SQRT_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cover_one_dimensional_contains_both_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_unit_sym(3, &mut rng);
        let w = PolySubspace::new(vec![m.clone()]).unwrap();
        let cover = poly_cover(&w).unwrap();
        let has_plus = cover.iter().any(|p| (p.matrix() - &m).norm() < 1e-9);
        let has_minus = cover.iter().any(|p| (p.matrix() + &m).norm() < 1e-9);
        assert!(has_plus && has_minus);
    }

    #[test]
    fn cover_dimension_three_covers() {
        let v = Subspace::new(Matrix::identity(2, 2)).unwrap();
        let w = PolySubspace::quadratics_on(&v); // dim 3
        assert_eq!(w.dim(), 3);
        let cover = poly_cover(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let mut c = DVector::from_fn(3, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); z });
            let n = c.norm();
            c /= n;
            let mut m = Matrix::zeros(2, 2);
            for (i, b) in w.basis().iter().enumerate() {
                m += b * c[i];
            }
            let covered = cover.iter().any(|p| (p.matrix() - &m).norm() <= 0.5);
            assert!(covered);
        }
    }

    #[test]
    fn cover_dimension_six_size_bounded() {
        // quadratics over a 3-dim space: dim 6
        let v = Subspace::new(Matrix::identity(3, 3)).unwrap();
        let w = PolySubspace::quadratics_on(&v);
        assert_eq!(w.dim(), 6);
        let cover = poly_cover(&w).unwrap();
        // size <= c^6 for a moderate constant
        assert!(cover.len() < 4096, "cover size {}", cover.len());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5_000 {
            let mut c = DVector::from_fn(6, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); z });
            let n = c.norm();
            c /= n;
            let mut m = Matrix::zeros(3, 3);
            for (i, b) in w.basis().iter().enumerate() {
                m += b * c[i];
            }
            assert!(cover.iter().any(|p| (p.matrix() - &m).norm() <= 0.5));
        }
    }

    #[test]
    fn harmonic_split_univariate_hermite_identity() {
        // p = (x^2 - 1)/sqrt2: q = (x^4 - 6x^2 + 3)/2, r = 2(x^2 - 1) + 1
        let p = QuadraticPoly::new(Matrix::from_element(1, 1, 1.0)).unwrap();
        let (q, (b, c)) = harmonic_split(&p);
        assert_relative_eq!(c, 1.0, epsilon = 1e-12);
        assert_relative_eq!(b[(0, 0)], 2.0 * std::f64::consts::SQRT_2, epsilon = 1e-12);
        for i in 0..100 {
            let x = -5.0 + 0.1 * i as f64;
            let xv = DVector::from_element(1, x);
            let expect_q = (x.powi(4) - 6.0 * x * x + 3.0) / 2.0;
            assert!((q.evaluate(&xv) - expect_q).abs() < 1e-12);
            let r = c + (x * b[(0, 0)] * x - b[(0, 0)]) / std::f64::consts::SQRT_2;
            assert!((r - (2.0 * (x * x - 1.0) + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_split_pointwise_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in [2usize, 4, 6] {
            let p = QuadraticPoly::from_matrix_normalized(random_unit_sym(d, &mut rng)).unwrap();
            let (q, (b, c)) = harmonic_split(&p);
            for _ in 0..3_000 {
                let x = DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0));
                let pv = p.evaluate(&x);
                let r = c + (x.dot(&(&b * &x)) - b.trace()) / std::f64::consts::SQRT_2;
                let qv = q.evaluate(&x);
                assert!(
                    (pv * pv - (qv + r)).abs() <= 1e-9,
                    "reconstruction off by {}",
                    (pv * pv - (qv + r)).abs()
                );
            }
        }
    }

    #[test]
    fn harmonic_part_is_mean_zero_and_orthogonal_to_deg2() {
        let d = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = QuadraticPoly::from_matrix_normalized(random_unit_sym(d, &mut rng)).unwrap();
        let (q, _) = harmonic_split(&p);
        let n = 1_000_000;
        let s = sample_gaussian(&GaussianParams::standard(d), n, 6).unwrap();
        let mut mean = 0.0;
        let mut cross = 0.0; // against x_0 x_1 - delta_{01}
        let mut second = 0.0;
        for r in 0..n {
            let x = s.row(r).transpose();
            let qv = q.evaluate(&x);
            mean += qv;
            cross += qv * (x[0] * x[1]);
            second += qv * qv;
        }
        mean /= n as f64;
        cross /= n as f64;
        second /= n as f64;
        let sd = (second / n as f64).sqrt();
        assert!(mean.abs() <= 5.0 * sd, "mean {mean}, sd {sd}");
        assert!(cross.abs() <= 5.0 * (second / n as f64).sqrt() * 2.0, "cross {cross}");
    }

    #[test]
    fn quartic_norm_routes_agree() {
        // k=1, d=1: |q|_2 = sqrt(6), by tensor formula and by Monte-Carlo
        let p = QuadraticPoly::new(Matrix::from_element(1, 1, 1.0)).unwrap();
        let tensor = quartic_norm(&[p.clone()]);
        assert_relative_eq!(tensor, 6.0f64.sqrt(), epsilon = 1e-12);

        let q = QuarticHarmonic::from_polys(&[p]);
        let n = 2_000_000;
        let s = sample_gaussian(&GaussianParams::standard(1), n, 7).unwrap();
        let mc: f64 = (0..n)
            .map(|r| {
                let v = q.evaluate(&s.row(r).transpose());
                v * v
            })
            .sum::<f64>()
            / n as f64;
        let mc_norm = mc.sqrt();
        assert!(
            (mc_norm - tensor).abs() <= 0.02 * tensor,
            "mc {mc_norm} vs tensor {tensor}"
        );
        assert_relative_eq!(quartic_norm(&[]), 0.0);
    }

    #[test]
    fn quartic_norm_grows_like_sqrt_k() {
        let d = 6;
        let mut ratios = Vec::new();
        for k in 1..=d {
            let polys: Vec<QuadraticPoly> = (0..k)
                .map(|i| {
                    let mut m = Matrix::zeros(d, d);
                    m[(i, i)] = 1.0;
                    QuadraticPoly::new(m).unwrap()
                })
                .collect();
            ratios.push(quartic_norm(&polys) / (k as f64).sqrt());
        }
        for r in &ratios {
            assert_relative_eq!(*r, ratios[0], epsilon = 1e-9);
        }
    }

    #[test]
    fn quartic_norm_multivariate_matches_monte_carlo() {
        let d = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p1 = QuadraticPoly::from_matrix_normalized(random_unit_sym(d, &mut rng)).unwrap();
        // orthonormalize a second poly against the first
        let raw = random_unit_sym(d, &mut rng);
        let proj = p1.matrix() * p1.matrix().dot(&raw);
        let p2 = QuadraticPoly::from_matrix_normalized(raw - proj).unwrap();
        let polys = vec![p1, p2];
        let tensor = quartic_norm(&polys);
        let q = QuarticHarmonic::from_polys(&polys);
        let n = 2_000_000;
        let s = sample_gaussian(&GaussianParams::standard(d), n, 9).unwrap();
        let mc: f64 = (0..n)
            .map(|r| {
                let v = q.evaluate(&s.row(r).transpose());
                v * v
            })
            .sum::<f64>()
            / n as f64;
        assert!(
            (mc.sqrt() - tensor).abs() <= 0.02 * tensor,
            "mc {} vs tensor {tensor}",
            mc.sqrt()
        );
    }

    #[test]
    fn hanson_wright_cases() {
        let a = Matrix::identity(5, 5);
        assert_relative_eq!(hanson_wright_bound(&a, 0.0).unwrap(), 2.0);

        // Monte-Carlo domination at t = 30 over 1e7 draws
        let n = 10_000_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut hits = 0usize;
        for _ in 0..n {
            let mut q = 0.0;
            for _ in 0..5 {
                let z: f64 = StandardNormal.sample(&mut rng);
                q += z * z;
            }
            if (q - 5.0).abs() > 30.0 {
                hits += 1;
            }
        }
        let emp = hits as f64 / n as f64;
        let bound = hanson_wright_bound(&a, 30.0).unwrap();
        assert!(emp <= bound, "emp {emp} vs bound {bound}");

        // rank-one case: linear regime shape for large t
        let mut e = Matrix::zeros(3, 3);
        e[(0, 0)] = 1.0;
        let b20 = hanson_wright_bound(&e, 20.0).unwrap();
        let b40 = hanson_wright_bound(&e, 40.0).unwrap();
        assert_relative_eq!(
            (b20 / 2.0).ln() / (b40 / 2.0).ln(),
            0.5,
            epsilon = 1e-9
        );
        // and it dominates the true chi-squared_1 tail
        let mut hits = 0usize;
        let m = 1_000_000;
        for _ in 0..m {
            let z: f64 = StandardNormal.sample(&mut rng);
            if (z * z - 1.0).abs() > 20.0 {
                hits += 1;
            }
        }
        assert!(hits as f64 / m as f64 <= b20);
    }

    #[test]
    fn hypercontractive_tail_dominates_random_quartics() {
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400_000;
        let s = sample_gaussian(&GaussianParams::standard(d), n, 12).unwrap();
        for trial in 0..5 {
            let k = 1 + (trial % 4);
            let mut polys = Vec::new();
            let mut gram: Vec<Matrix> = Vec::new();
            while polys.len() < k {
                let mut m = random_unit_sym(d, &mut rng);
                for g in &gram {
                    let c = g.dot(&m);
                    m -= g * c;
                }
                if m.norm() > 0.3 {
                    let n_ = m.norm();
                    let unit = m / n_;
                    gram.push(unit.clone());
                    polys.push(QuadraticPoly::new(unit).unwrap());
                }
            }
            let q = QuarticHarmonic::from_polys(&polys);
            let norm = q.l2_norm();
            let mut values: Vec<f64> = (0..n)
                .map(|r| q.evaluate(&s.row(r).transpose()).abs() / norm)
                .collect();
            values.sort_by(f64::total_cmp);
            for t in [9.0f64, 12.0, 16.0, 25.0] {
                let emp = values.iter().rev().take_while(|&&v| v >= t).count() as f64
                    / n as f64;
                let bound = hypercontractive_tail_bound(t);
                assert!(
                    emp <= bound,
                    "trial {trial} t {t}: emp {emp} vs bound {bound}"
                );
            }
        }
    }

    #[test]
    fn schatten_perturbation_bound() {
        // |S^{1/2} M S^{1/2} - Sh^{1/2} M Sh^{1/2}|_{S1} <= 5 delta
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let base = random_unit_sym(d, &mut rng) * 0.2;
            let sigma = Matrix::identity(d, d) + &base;
            let delta: f64 = rng.random_range(0.01..0.2);
            let pert = random_unit_sym(d, &mut rng) * delta;
            let sigma_hat = &sigma + &pert;
            // ensure PSD
            if crate::gaussian::sym_eigendecomp(&sigma_hat).unwrap().0[0] <= 0.0 {
                continue;
            }
            let m = random_unit_sym(d, &mut rng);
            let s_half = psd_sqrt(&sigma).unwrap();
            let sh_half = psd_sqrt(&sigma_hat).unwrap();
            let diff = &s_half * &m * &s_half - &sh_half * &m * &sh_half;
            let trace_norm: f64 = diff.svd(false, false).singular_values.iter().sum();
            let frob_delta = pert.norm();
            assert!(
                trace_norm <= 5.0 * frob_delta + 1e-9,
                "trace norm {trace_norm} vs 5 delta {}",
                5.0 * frob_delta
            );
        }
    }

    #[test]
    fn learn_mean_poly_empty_w1_returns_sigma_hat() {
        let d = 3;
        let sigma_hat = Matrix::identity(d, d) * 1.1;
        let s = sample_gaussian(&GaussianParams::standard(d), 100, 14).unwrap();
        let out = learn_mean_poly_low_d(
            &s,
            0.05,
            &PolySubspace::empty(),
            &PolyWindow::Empty,
            &sigma_hat,
            0.1,
            0.1,
            &Default::default(),
            15,
        )
        .unwrap();
        assert_relative_eq!((out - sigma_hat).norm(), 0.0);
    }

    #[test]
    fn learn_mean_poly_constraints_are_convex() {
        // midpoints of feasible points stay feasible: run twice from
        // different starts and check the midpoint against the constraints
        let d = 2;
        let sigma = Matrix::identity(d, d);
        let params = GaussianParams::new(DVector::zeros(d), sigma).unwrap();
        let s = sample_gaussian(&params, 20_000, 16).unwrap();
        let v = Subspace::full(d);
        let w1 = PolySubspace::quadratics_on(&v);
        let opts = PolyLearnOptions {
            frob_bound: 0.2,
            improvement: Some(10.0),
            mc_cap: 20_000,
        };
        let a = learn_mean_poly_low_d(
            &s,
            0.02,
            &w1,
            &PolyWindow::Empty,
            &Matrix::identity(d, d),
            0.0,
            0.1,
            &opts,
            17,
        )
        .unwrap();
        let b = learn_mean_poly_low_d(
            &s,
            0.02,
            &w1,
            &PolyWindow::Empty,
            &(Matrix::identity(d, d) * 1.3),
            0.0,
            0.1,
            &opts,
            17,
        )
        .unwrap();
        let mid = (&a + &b) * 0.5;
        // both runs used the same targets (same seed), so the slabs agree
        // and the midpoint must satisfy them
        for p in poly_cover(&w1).unwrap() {
            let va = (p.matrix().dot(&a) - p.matrix().trace()) / std::f64::consts::SQRT_2;
            let vb = (p.matrix().dot(&b) - p.matrix().trace()) / std::f64::consts::SQRT_2;
            let vm = (p.matrix().dot(&mid) - p.matrix().trace()) / std::f64::consts::SQRT_2;
            assert!(vm <= va.max(vb) + 1e-9 && vm >= va.min(vb) - 1e-9);
        }
    }

    #[test]
    fn learn_mean_poly_full_symmetric_space() {
        // d=4, W1 = full symmetric space (dim 10), corrupted at eps=0.02
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let pert = random_unit_sym(d, &mut rng) * 0.1;
        let sigma = Matrix::identity(d, d) + &pert;
        let params = GaussianParams::new(DVector::zeros(d), sigma.clone()).unwrap();
        let w1 = PolySubspace::quadratics_on(&Subspace::full(d));
        assert_eq!(w1.dim(), 10);
        let opts = PolyLearnOptions {
            frob_bound: 0.2,
            improvement: Some(10.0),
            mc_cap: 20_000,
        };

        for seed in 0..2u64 {
            let clean = sample_gaussian(&params, 20_000, 100 + seed).unwrap();
            let strategy = crate::contamination::AdversaryStrategy::TailShift {
                magnitude: 1.0,
                direction: None,
                directions: 1,
            };
            let corrupted =
                crate::contamination::corrupt(&clean, 0.02, &strategy, 200 + seed).unwrap();
            let out = learn_mean_poly_low_d(
                &corrupted.samples,
                0.02,
                &w1,
                &PolyWindow::Empty,
                &Matrix::identity(d, d),
                0.0,
                0.1,
                &opts,
                300 + seed,
            )
            .unwrap();
            // max over random unit polys of the expectation gap
            let mut worst = 0.0f64;
            for _ in 0..50 {
                let m = random_unit_sym(d, &mut rng);
                let gap = (crate::gaussian::poly_expectation(&m, &out).unwrap()
                    - crate::gaussian::poly_expectation(&m, &sigma).unwrap())
                .abs()
                    / std::f64::consts::SQRT_2;
                worst = worst.max(gap);
            }
            assert!(worst <= 0.35, "seed {seed}: worst gap {worst}");
        }
    }

    #[test]
    fn learn_cov_low_dim_cases() {
        let d = 5;
        // V = {0}: identity output
        let out = learn_cov_low_dim(
            &sample_gaussian(&GaussianParams::standard(d), 100, 19).unwrap(),
            0.02,
            0.1,
            0.1,
            &Subspace::trivial(d),
            &Default::default(),
            20,
        )
        .unwrap();
        assert_relative_eq!((out - Matrix::identity(d, d)).norm(), 0.0);

        // dim(V)=2 with a planted block
        let mut sigma = Matrix::identity(d, d);
        sigma[(0, 0)] = 1.1;
        sigma[(1, 1)] = 0.95;
        sigma[(0, 1)] = 0.05;
        sigma[(1, 0)] = 0.05;
        let params = GaussianParams::new(DVector::zeros(d), sigma.clone()).unwrap();
        let mut basis = Matrix::zeros(d, 2);
        basis[(0, 0)] = 1.0;
        basis[(1, 1)] = 1.0;
        let v = Subspace::new(basis).unwrap();
        let opts = PolyLearnOptions {
            frob_bound: 0.2,
            improvement: Some(10.0),
            mc_cap: 20_000,
        };

        let clean = sample_gaussian(&params, 30_000, 21).unwrap();
        let strategy = crate::contamination::AdversaryStrategy::DenseCluster {
            distance: 6.0,
            direction: None,
        };
        let corrupted = crate::contamination::corrupt(&clean, 0.02, &strategy, 22).unwrap();
        let out =
            learn_cov_low_dim(&corrupted.samples, 0.02, 0.2, 0.1, &v, &opts, 23).unwrap();
        let pv = v.projector();
        let err = (&pv * (&out - &sigma) * &pv).norm();
        assert!(err <= 0.35, "projected error {err}");

        // clean band
        let out_clean = learn_cov_low_dim(&clean, 0.0, 0.05, 0.1, &v, &opts, 24).unwrap();
        let err_clean = (&pv * (&out_clean - &sigma) * &pv).norm();
        assert!(err_clean <= 0.1, "clean error {err_clean}");

        assert!(learn_cov_low_dim(
            &clean,
            0.02,
            0.2,
            0.1,
            &Subspace::full(d),
            &opts,
            25
        )
        .is_err());
    }
}
