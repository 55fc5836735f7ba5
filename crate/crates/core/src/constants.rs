//! Frozen numerical constants used by the filters and estimators.
//!
//! The underlying guarantees are asymptotic and leave these symbolic; every
//! concrete value below was fixed once at desk scale and is exercised by the
//! test suite (see `tests/acceptance.rs` and the unit tests that re-check the
//! threshold-feasibility arithmetic numerically). Re-derive them with
//! `cargo run --example calibrate` after any change to the filter logic.

/// Hanson-Wright tail constant `c0` in
/// `P(|x^T A x - E| > t) <= 2 exp(-c0 min(t^2/|A|_F^2, t/|A|_2))`.
///
/// Calibrated by Monte-Carlo domination over chi-squared quadratic forms
/// (`A = I_5`, `t = 30`, 1e7 draws); 1/8 dominates with a wide margin in both
/// the quadratic and linear regimes.
pub const C0_HANSON_WRIGHT: f64 = 0.125;

/// Dimension trigger of the many-eigenvalue mean filter: filter when
/// `dim(V) >= C1_MEAN * beta * ln(1/eps)`.
pub const C1_MEAN: f64 = 4.0;

/// Boundedness threshold multiplier: removing everything above
/// `C2_MEAN * d * ln(|S|/delta)` touches no good point.
pub const C2_MEAN: f64 = 16.0;

/// Tail-rate divisor of the threshold search. The search accepts `T` with
/// empirical tail above `exp(-c0 T / (2 C3))`, i.e. rate `c0/(2 C3)`.
///
/// The rate must undercut the true chi-squared tail of the filter polynomial
/// (rate < 1/2 in the linear regime) while the grid origin
/// `2 C3 ln(1/eps)/c0` stays below the scores of plantable outliers. With
/// `c0 = 1/8`, `C3 = 0.25` gives rate 1/4 and grid origin `4 ln(1/eps)`;
/// feasibility is re-checked numerically in `mean::tests`.
pub const C3_MEAN: f64 = 0.25;

/// Eigenvalue threshold multiplier of the degree-2 covariance filter:
/// directions with eigenvalue of `E_S[XX^T] - I` above `C_COV_EIG * xi`
/// are collected into `V`.
pub const C_COV_EIG: f64 = 2.0;

/// Count trigger of the degree-2 covariance filter: filter when more than
/// `max(C1_COV * ln(1/eps), cap)` eigenvalues exceed the threshold.
pub const C1_COV: f64 = 1.0;

/// Boundedness threshold multiplier of the covariance filters.
pub const C2_COV: f64 = 16.0;

/// Tail-rate divisor of the degree-2 covariance threshold search
/// (same role as `C3_MEAN`).
pub const C3_COV: f64 = 0.25;

/// Accumulation threshold of the degree-4 filter: a quadratic `p` joins the
/// suspicious basis when `E_S[p^2] - 1 > C1_DEG4 * xi`.
pub const C1_DEG4: f64 = 1.0;

/// Onset multiplier of the degree-4 threshold grid
/// (`T > 4 A^2 C2_DEG4 B sqrt(k) ln^2(1/eps)`).
pub const C2_DEG4: f64 = 1.0;

/// Far-point threshold multiplier of the degree-4 filter
/// (`T > C3_DEG4 d^2 sqrt(k) ln|S|`).
pub const C3_DEG4: f64 = 16.0;

/// Hypercontractive tail constant `A` in
/// `P(|Q - E Q| >= t |Q|_2) <= exp(-A sqrt(t))` for degree-4 `Q`.
///
/// Calibrated against Monte-Carlo tails of random quartic harmonics
/// (k <= 4); the asymptotic rate for a single squared quadratic is
/// `24^{1/4}/2 ~ 1.107`, and 0.9 dominates from the onset below.
pub const A_HYPERCONTRACTIVE: f64 = 0.9;

/// Onset `C` of the hypercontractive tail bound: the bound is asserted for
/// deviations `t >= C_HYPERCONTRACTIVE` (in units of `|Q|_2`).
pub const C_HYPERCONTRACTIVE: f64 = 9.0;

/// Truncation scale of the chi-squared mean estimator: `T = KAPPA_T ln(C)`.
/// Large enough that the tail difference between `N(0,I)` and `N(0,Sigma)`
/// chi-squared mixtures is below `|Sigma - I|_F / C` at desk scale, small
/// enough that the in-threshold influence `2 T eps` stays moderate.
pub const KAPPA_T: f64 = 8.0;

/// Monte-Carlo sample multiplier of the chi-squared mean estimator:
/// `m = ceil(KAPPA_M ln(2/tau) / eps^2)` (capped at [`CHI2_MC_CAP`]).
pub const KAPPA_M: f64 = 4.0;

/// Cap on the Monte-Carlo tail-sample count (also the value used when
/// `eps = 0`, where the formula diverges).
pub const CHI2_MC_CAP: usize = 200_000;

/// Coefficient of the `ln(C) * eps` term in the chi-squared estimator's
/// error budget, measured once over the corpus of unit tests.
pub const C_CHI2_ERR: f64 = 1.0;

/// Stopping threshold of the single-direction mean initializer: iterate
/// while the top eigenvalue of the sample covariance exceeds
/// `1 + C_INIT_MEAN * eps * ln(1/eps)`.
pub const C_INIT_MEAN: f64 = 0.75;

/// Error contract multiplier of the mean initializer
/// (`|mu_0 - mu| <= C_INIT_ERR * eps * sqrt(ln 1/eps)` on good inputs).
pub const C_INIT_ERR: f64 = 4.0;

/// Stopping threshold of the covariance initializer: iterate while the top
/// quadratic variance `E_S[p^2] - 1` exceeds `C_INIT_COV * eps * ln(1/eps)`.
pub const C_INIT_COV: f64 = 1.5;

/// Frobenius bound carried by the covariance pipeline after initialization:
/// `xi_0 = XI0_COV * eps * ln(1/eps)`.
pub const XI0_COV: f64 = 2.0;

/// Error floor at which the covariance contraction stops:
/// `xi_floor = C_COV_FLOOR * eps`.
pub const C_COV_FLOOR: f64 = 3.0;

/// Certified accuracy of the empirical second moment on quadratics
/// orthogonal to the degree-4 basis: `C_CERT * sqrt(xi * eps)`.
pub const C_CERT: f64 = 2.0;

/// Norm cutoff for per-direction conditional mean estimates in stitching
/// (`a_v` is zeroed when its norm exceeds `C_STITCH_NORM * ln(1/eps)`).
pub const C_STITCH_NORM: f64 = 2.0;

/// Minimum accepted-sample count per conditioning vector in stitching.
pub const STITCH_MIN_SAMPLES: usize = 120;

/// Default number of stitching conditioning vectors (the analysis uses
/// `(n/eps)^C`, a proof device; this cap suffices for the Frobenius fit at
/// desk dimensions and is configurable via [`crate::harness::Caps`]).
pub const STITCH_M_DEFAULT: usize = 512;

/// Default cap on the dimension handled by the low-dimensional mean learner.
pub const LOWDIM_CAP_DEFAULT: usize = 6;

/// Default cap on the number of degree-4 filter polynomials.
pub const K_CAP_DEFAULT: usize = 6;

/// Cap on the dimension of a quadratic-polynomial subspace accepted by the
/// cover construction (quadratics over a 4-dimensional space).
pub const POLY_COVER_CAP: usize = 10;

/// Cap on the spatial dimension accepted by `poly::learn_cov_low_dim`.
pub const LOWDIM_COV_CAP: usize = 4;

/// Point budget for ball nets in the circumscribing-ball search. When the
/// lattice at the requested resolution would exceed this, the resolution is
/// coarsened (the returned radius guarantee degrades gracefully with it).
pub const BALL_NET_BUDGET: usize = 150_000;

/// Consecutive covered probes required before a greedy sphere net or
/// polynomial cover is considered complete (scaled down in high dimension).
pub const NET_PROBE_BUDGET: usize = 100_000;

/// Sweep budget for the alternating-projection feasibility search; exceeding
/// it without convergence signals an empty slab body.
pub const FEASIBILITY_MAX_SWEEPS: usize = 10_000;

/// Largest supported corruption fraction for the mean pipeline.
pub const EPS0_MEAN: f64 = 1.0 / 6.0;

/// Scheffe-set masses under each hypothesis are estimated with
/// `ceil(TOURNAMENT_MC / eps^2)` Monte-Carlo draws per pair.
pub const TOURNAMENT_MC: f64 = 10.0;

/// `Phi^{-1}(3/4)`, the MAD-to-sigma normalizer.
pub const PHI_INV_3_4: f64 = 0.6744897501960817;
