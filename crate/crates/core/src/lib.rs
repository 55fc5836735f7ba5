//! Robust estimation of the mean and covariance of a high-dimensional
//! Gaussian from adversarially corrupted samples.
//!
//! An adversary inspects `(1-eps)n` i.i.d. draws from `N(mu, Sigma)` and
//! appends `eps*n` arbitrary points; the estimators here recover the
//! parameters to total-variation error `O(eps)`, dimension free. The crate
//! provides:
//!
//! - contamination simulators and the lost-good/kept-bad potential ledger
//!   that certifies filter progress ([`contamination`]),
//! - one-dimensional robust primitives: median, MAD, and a truncated
//!   chi-squared mean estimator for quadratic statistics ([`univariate`]),
//! - a low-dimensional mean learner built from directional medians, slab
//!   intersections and an approximate circumscribing-ball search
//!   ([`lowdim`]),
//! - eigenvalue filters and the full high-dimensional mean pipeline
//!   ([`mean`]),
//! - quadratic/quartic polynomial machinery and low-dimensional covariance
//!   recovery ([`poly`]),
//! - degree-2/degree-4 covariance filters, subspace stitching, and the
//!   iterated covariance contraction ([`cov`]),
//! - Scheffe tournament hypothesis selection ([`select`]),
//! - an end-to-end estimator plus a reproducible benchmark harness
//!   ([`harness`]).
//!
//! All randomized routines take explicit seeds and are deterministic for a
//! fixed seed. Sample sets are plain `n x d` matrices, one row per sample.

pub mod constants;
pub mod contamination;
pub mod cov;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod io;
pub mod lowdim;
pub mod mean;
pub mod poly;
pub mod select;
pub mod univariate;

pub use contamination::{AdversaryStrategy, ContaminatedSet, DeltaLedger, Label};
pub use error::{Error, Result};
pub use gaussian::{FlatMatrix, GaussianParams, Subspace};
pub use mean::FilterOutcome;
pub use poly::{PolySubspace, QuadraticPoly};

/// Sample matrix: one row per sample, one column per coordinate.
pub type Samples = nalgebra::DMatrix<f64>;
/// Column vector of `f64`.
pub type Vector = nalgebra::DVector<f64>;
/// Dense `f64` matrix.
pub type Matrix = nalgebra::DMatrix<f64>;

/// Desk-scale caps on the exponential-cost subroutines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Caps {
    /// Dimension cap of the low-dimensional mean learner.
    #[serde(default = "caps_lowdim_default")]
    pub lowdim: usize,
    /// Cap on the number of degree-4 filter polynomials.
    #[serde(default = "caps_k_default")]
    pub k: usize,
    /// Number of stitching conditioning vectors.
    #[serde(default = "caps_stitch_default")]
    pub stitch_m: usize,
}

fn caps_lowdim_default() -> usize {
    constants::LOWDIM_CAP_DEFAULT
}
fn caps_k_default() -> usize {
    constants::K_CAP_DEFAULT
}
fn caps_stitch_default() -> usize {
    constants::STITCH_M_DEFAULT
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            lowdim: constants::LOWDIM_CAP_DEFAULT,
            k: constants::K_CAP_DEFAULT,
            stitch_m: constants::STITCH_M_DEFAULT,
        }
    }
}
