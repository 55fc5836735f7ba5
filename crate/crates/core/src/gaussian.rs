//! Gaussian sampling, moment computation, total-variation formulas, matrix
//! flattening, the fourth-moment operator and the symmetric
//! eigendecomposition contract shared by every filter.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::{Matrix, Samples, Vector};

/// Standard normal CDF, via `erf` (absolute error below 1e-12).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal quantile function.
pub fn normal_quantile(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * statrs::function::erf::erf_inv(2.0 * p - 1.0)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Mean vector and positive-semidefinite covariance of a target Gaussian.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    pub mean: Vector,
    pub covariance: Matrix,
}

impl GaussianParams {
    /// Validates symmetry (1e-12 relative) and positive semidefiniteness.
    pub fn new(mean: Vector, covariance: Matrix) -> Result<Self> {
        let d = mean.len();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::InvalidInput(format!(
                "covariance is {}x{}, mean has length {d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        let scale = covariance.norm().max(1.0);
        if (&covariance - covariance.transpose()).norm() > 1e-12 * scale {
            return Err(Error::InvalidInput("covariance is not symmetric".into()));
        }
        let (eigvals, _) = sym_eigendecomp(&covariance)?;
        let lambda_max = eigvals[d - 1].max(0.0);
        if eigvals[0] < -1e-10 * lambda_max.max(1.0) {
            return Err(Error::InvalidInput(format!(
                "covariance has negative eigenvalue {}",
                eigvals[0]
            )));
        }
        Ok(Self { mean, covariance })
    }

    /// Standard Gaussian `N(0, I_d)`.
    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            covariance: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log-density at `x`. Requires a strictly positive-definite covariance.
    pub fn log_density(&self, x: &Vector) -> f64 {
        let d = self.dim() as f64;
        let (vals, q) = sym_eigendecomp(&self.covariance).expect("validated covariance");
        let centered = q.transpose() * (x - &self.mean);
        let mut quad = 0.0;
        let mut logdet = 0.0;
        for i in 0..self.dim() {
            quad += centered[i] * centered[i] / vals[i];
            logdet += vals[i].ln();
        }
        -0.5 * (quad + logdet + d * (2.0 * std::f64::consts::PI).ln())
    }
}

/// Orthonormal basis of a linear subspace of the sample space.
///
/// `basis` is `d x k` with orthonormal columns; `k = 0` encodes the trivial
/// subspace.
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: Matrix,
}

impl Subspace {
    /// Validates `basis^T basis = I_k` within 1e-10.
    pub fn new(basis: Matrix) -> Result<Self> {
        let k = basis.ncols();
        if k > basis.nrows() {
            return Err(Error::InvalidInput(format!(
                "subspace dimension {k} exceeds ambient dimension {}",
                basis.nrows()
            )));
        }
        let gram = basis.transpose() * &basis;
        if (&gram - DMatrix::identity(k, k)).norm() > 1e-10 * (k.max(1) as f64).sqrt() {
            return Err(Error::InvalidInput(
                "subspace basis columns are not orthonormal".into(),
            ));
        }
        Ok(Self { basis })
    }

    /// Trivial subspace of `R^d`.
    pub fn trivial(d: usize) -> Self {
        Self {
            basis: DMatrix::zeros(d, 0),
        }
    }

    /// Full space `R^d`.
    pub fn full(d: usize) -> Self {
        Self {
            basis: DMatrix::identity(d, d),
        }
    }

    /// Span of a single (nonzero) vector.
    pub fn line(v: &Vector) -> Result<Self> {
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::InvalidInput("zero vector spans no line".into()));
        }
        Self::new(Matrix::from_column_slice(v.len(), 1, (v / n).as_slice()))
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Projection matrix `Pi_V = B B^T`.
    pub fn projector(&self) -> Matrix {
        &self.basis * self.basis.transpose()
    }

    /// Projects an ambient vector onto the subspace (still ambient).
    pub fn project(&self, x: &Vector) -> Vector {
        &self.basis * (self.basis.transpose() * x)
    }

    /// Coordinates of ambient rows in the subspace frame (`n x k`).
    pub fn coords(&self, samples: &Samples) -> Samples {
        samples * &self.basis
    }

    /// Maps subspace-frame coordinates back to an ambient vector.
    pub fn from_coords(&self, c: &Vector) -> Vector {
        &self.basis * c
    }

    /// Orthogonal complement, with basis from the eigenvectors of
    /// `I - Pi_V`.
    pub fn complement(&self) -> Self {
        let d = self.ambient_dim();
        let k = self.dim();
        if k == 0 {
            return Self::full(d);
        }
        if k == d {
            return Self::trivial(d);
        }
        let residual = DMatrix::identity(d, d) - self.projector();
        let (vals, vecs) = sym_eigendecomp(&residual).expect("projector is symmetric");
        // Eigenvalues are 0 (on V) and 1 (on the complement), ascending.
        let cols: Vec<usize> = (0..d).filter(|&i| vals[i] > 0.5).collect();
        let mut basis = DMatrix::zeros(d, cols.len());
        for (j, &i) in cols.iter().enumerate() {
            basis.set_column(j, &vecs.column(i));
        }
        Self::new(basis).expect("eigenvectors are orthonormal")
    }
}

/// Row-major flattening of a `d x d` matrix into a vector of length `d^2`.
#[derive(Debug, Clone)]
pub struct FlatMatrix {
    pub vec: Vector,
    pub side: usize,
}

/// Flattens a square matrix in row-major order.
pub fn flatten(m: &Matrix) -> FlatMatrix {
    let d = m.nrows();
    debug_assert_eq!(d, m.ncols());
    let mut v = DVector::zeros(d * d);
    for i in 0..d {
        for j in 0..d {
            v[i * d + j] = m[(i, j)];
        }
    }
    FlatMatrix { vec: v, side: d }
}

/// Inverse of [`flatten`].
pub fn sharpen(f: &FlatMatrix) -> Result<Matrix> {
    let d = f.side;
    if f.vec.len() != d * d {
        return Err(Error::InvalidInput(format!(
            "flat vector has length {}, not {}^2",
            f.vec.len(),
            d
        )));
    }
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = f.vec[i * d + j];
        }
    }
    Ok(m)
}

/// Flattens a vector of length `d^2` whose side is inferred; rejects lengths
/// that are not perfect squares.
pub fn flat_from_vec(v: Vector) -> Result<FlatMatrix> {
    let len = v.len();
    let side = (len as f64).sqrt().round() as usize;
    if side * side != len {
        return Err(Error::InvalidInput(format!(
            "length {len} is not a perfect square"
        )));
    }
    Ok(FlatMatrix { vec: v, side })
}

/// Symmetric eigendecomposition with deterministic ascending ordering.
///
/// Returns `(eigenvalues ascending, Q)` with `A Q = Q diag(lambda)` and
/// orthonormal `Q`. Rejects inputs that are not symmetric within 1e-10
/// relative tolerance.
pub fn sym_eigendecomp(a: &Matrix) -> Result<(Vector, Matrix)> {
    let d = a.nrows();
    if d != a.ncols() {
        return Err(Error::InvalidInput("matrix is not square".into()));
    }
    let scale = a.norm().max(1.0);
    if (a - a.transpose()).norm() > 1e-10 * scale {
        return Err(Error::InvalidInput("matrix is not symmetric".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut vals = DVector::zeros(d);
    let mut vecs = DMatrix::zeros(d, d);
    for (pos, &i) in order.iter().enumerate() {
        vals[pos] = eig.eigenvalues[i];
        vecs.set_column(pos, &eig.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

/// Symmetric PSD square root, clamping eigenvalues in
/// `[-1e-10 * lambda_max, 0)` to zero.
pub fn psd_sqrt(a: &Matrix) -> Result<Matrix> {
    psd_power(a, 0.5)
}

/// Symmetric inverse square root (requires strictly positive spectrum after
/// clamping).
pub fn psd_inv_sqrt(a: &Matrix) -> Result<Matrix> {
    psd_power(a, -0.5)
}

fn psd_power(a: &Matrix, pow: f64) -> Result<Matrix> {
    let (vals, q) = sym_eigendecomp(a)?;
    let d = a.nrows();
    let lambda_max = vals[d - 1].max(0.0);
    let mut scaled = q.clone();
    for i in 0..d {
        let mut v = vals[i];
        if v < 0.0 {
            if v < -1e-10 * lambda_max.max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "matrix is not PSD (eigenvalue {v})"
                )));
            }
            v = 0.0;
        }
        if pow < 0.0 && v == 0.0 {
            return Err(Error::InvalidInput(
                "matrix is singular; cannot invert".into(),
            ));
        }
        let w = v.powf(pow);
        for r in 0..d {
            scaled[(r, i)] *= w;
        }
    }
    Ok(&scaled * q.transpose())
}

/// Draws `n` i.i.d. samples from `N(mean, covariance)`, deterministically
/// for a fixed seed.
pub fn sample_gaussian(params: &GaussianParams, n: usize, seed: u64) -> Result<Samples> {
    if n == 0 {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let d = params.dim();
    let root = psd_sqrt(&params.covariance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = DMatrix::zeros(n, d);
    let mut z = DVector::zeros(d);
    for r in 0..n {
        for i in 0..d {
            z[i] = StandardNormal.sample(&mut rng);
        }
        let x = &root * &z + &params.mean;
        out.row_mut(r).copy_from(&x.transpose());
    }
    Ok(out)
}

/// Empirical mean plus either the covariance about the mean (unbiased,
/// denominator `n-1`) or, when `center` is given, the second moment about
/// that center (denominator `n`). Filters use the centered variant with
/// `center = 0` to get `E_S[X X^T]`.
pub fn empirical_moments(samples: &Samples, center: Option<&Vector>) -> Result<(Vector, Matrix)> {
    let n = samples.nrows();
    let d = samples.ncols();
    if n < 2 {
        return Err(Error::InvalidInput("need at least two samples".into()));
    }
    let mean = samples.row_mean().transpose();
    let mut second = DMatrix::zeros(d, d);
    match center {
        Some(c) => {
            if c.len() != d {
                return Err(Error::InvalidInput("center has wrong length".into()));
            }
            for r in 0..n {
                let x = samples.row(r).transpose() - c;
                second.syger(1.0 / n as f64, &x, &x, 1.0);
            }
        }
        None => {
            for r in 0..n {
                let x = samples.row(r).transpose() - &mean;
                second.syger(1.0 / (n - 1) as f64, &x, &x, 1.0);
            }
        }
    }
    // syger fills the lower triangle; mirror it.
    for i in 0..d {
        for j in (i + 1)..d {
            second[(i, j)] = second[(j, i)];
        }
    }
    Ok((mean, second))
}

/// Exact total variation distance between `N(mu1, I)` and `N(mu2, I)`:
/// `2 Phi(|mu1 - mu2| / 2) - 1`.
pub fn tv_identity_cov(mu1: &Vector, mu2: &Vector) -> Result<f64> {
    if mu1.len() != mu2.len() {
        return Err(Error::InvalidInput("mean vectors differ in length".into()));
    }
    let delta = (mu1 - mu2).norm();
    Ok(2.0 * normal_cdf(delta / 2.0) - 1.0)
}

/// Fourth-moment operator `E[(X (x) X)(X (x) X)^T]` of `N(0, Sigma)` as a
/// `d^2 x d^2` matrix acting on flattenings of symmetric matrices:
/// `2 Sigma (x) Sigma + (Sigma^flat)(Sigma^flat)^T`.
pub fn fourth_moment_operator(sigma: &Matrix) -> Matrix {
    let flat = flatten(sigma);
    let kron = sigma.kronecker(sigma);
    kron * 2.0 + &flat.vec * flat.vec.transpose()
}

/// `E_{N(0,Sigma)}[p(X)] * sqrt(2) = <M, Sigma - I>` for the polynomial
/// associated to a unit-Frobenius symmetric `M`. Returns the raw inner
/// product; the polynomial evaluator carries the `1/sqrt(2)` factor.
pub fn poly_expectation(m: &Matrix, sigma: &Matrix) -> Result<f64> {
    check_unit_frobenius(m)?;
    let d = m.nrows();
    let diff = sigma - DMatrix::identity(d, d);
    Ok(m.dot(&diff))
}

/// `E_{N(0,Sigma)}[p^2(X)]` for the polynomial
/// `p(x) = (x^T M x - tr M)/sqrt(2)` associated to a unit-Frobenius `M`:
/// `(M^flat)^T Sigma^{(x)2} M^flat + (1/2) <Sigma - I, M>^2`.
pub fn poly_second_moment(m: &Matrix, sigma: &Matrix) -> Result<f64> {
    check_unit_frobenius(m)?;
    let sm = sigma * m * sigma; // (M^flat)^T (S (x) S) M^flat = <M, S M S>
    let quad = m.dot(&sm);
    let lin = poly_expectation(m, sigma)?;
    Ok(quad + 0.5 * lin * lin)
}

fn check_unit_frobenius(m: &Matrix) -> Result<()> {
    if (m.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "matrix must have unit Frobenius norm (got {})",
            m.norm()
        )));
    }
    Ok(())
}

/// Finds the unit-Frobenius symmetric matrix in the span of `basis`
/// maximizing the quadratic form `(M^flat)^T op M^flat`, by
/// eigendecomposition of the operator projected onto the subspace.
///
/// `basis` must be orthonormal under the trace inner product, and `op` a
/// symmetric operator on `R^{d^2}` (e.g. a fourth-moment operator). Returns
/// the maximizer and the attained value.
pub fn top_variance_poly(op: &Matrix, basis: &[Matrix]) -> Result<(Matrix, f64)> {
    let k = basis.len();
    if k == 0 {
        return Err(Error::InvalidInput("empty constraint subspace".into()));
    }
    let d = basis[0].nrows();
    let flats: Vec<Vector> = basis.iter().map(|b| flatten(b).vec).collect();
    let mut projected = DMatrix::zeros(k, k);
    let images: Vec<Vector> = flats.iter().map(|f| op * f).collect();
    for i in 0..k {
        for j in 0..k {
            projected[(i, j)] = flats[i].dot(&images[j]);
        }
    }
    let (vals, vecs) = sym_eigendecomp(&projected)?;
    let top = vecs.column(k - 1);
    let mut m = DMatrix::zeros(d, d);
    for (i, b) in basis.iter().enumerate() {
        m += b * top[i];
    }
    let norm = m.norm();
    if norm < 1e-12 {
        return Err(Error::Internal("degenerate top eigenvector".into()));
    }
    m /= norm;
    Ok((m, vals[k - 1]))
}
