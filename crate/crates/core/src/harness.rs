//! End-to-end estimation and the reproducible benchmark harness: the
//! pairing + whitening reduction for general Gaussians, experiment
//! configuration, and CSV reporting.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contamination::{corrupt, delta_ledger, AdversaryStrategy, ContaminatedSet, Label};
use crate::cov::{mahalanobis_error, recover_cov};
use crate::error::{Error, Result};
use crate::gaussian::{
    empirical_moments, psd_inv_sqrt, psd_sqrt, sample_gaussian, tv_identity_cov, GaussianParams,
};
use crate::mean::{recover_mean, MeanOptions, RunTrace};
use crate::{Caps, Matrix, Vector};

/// Mean specification of the target Gaussian in a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanSpec {
    Zero,
    Constant { value: f64 },
    Explicit { values: Vec<f64> },
}

/// Covariance specification of the target Gaussian in a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovSpec {
    Identity,
    Scaled { scale: f64 },
    /// `I` plus a seeded random rank-`rank` perturbation of Frobenius norm
    /// `scale`.
    Spiked { rank: usize, scale: f64 },
    Explicit { rows: Vec<Vec<f64>> },
}

/// Which estimator the benchmark runs (the empirical baseline always runs
/// alongside).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Empirical mean/covariance only.
    Empirical,
    /// Robust mean, covariance assumed identity.
    Mean,
    /// Robust covariance, mean assumed zero.
    Cov,
    /// Full pipeline: pairing, covariance, whitening, mean.
    Full,
}

/// One benchmark configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d: usize,
    pub n: usize,
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub adversary: AdversaryStrategy,
    pub estimator: EstimatorKind,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default = "default_mean_spec")]
    pub mean: MeanSpec,
    #[serde(default = "default_cov_spec")]
    pub cov: CovSpec,
    /// When false, the wall-time column is written as 0 so re-runs are
    /// byte identical.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

fn default_delta() -> f64 {
    0.05
}
fn default_trials() -> usize {
    1
}
fn default_mean_spec() -> MeanSpec {
    MeanSpec::Zero
}
fn default_cov_spec() -> CovSpec {
    CovSpec::Identity
}
fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n < 2 {
            return Err(Error::Config("need d >= 1 and n >= 2".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if self.caps.lowdim == 0 || self.caps.k == 0 || self.caps.stitch_m == 0 {
            return Err(Error::Config("caps must be >= 1".into()));
        }
        if !(0.0..=1.0 / 3.0).contains(&self.epsilon) {
            return Err(Error::Config("epsilon must lie in [0, 1/3]".into()));
        }
        Ok(())
    }

    pub fn target(&self) -> Result<GaussianParams> {
        let mean = match &self.mean {
            MeanSpec::Zero => DVector::zeros(self.d),
            MeanSpec::Constant { value } => DVector::from_element(self.d, *value),
            MeanSpec::Explicit { values } => {
                if values.len() != self.d {
                    return Err(Error::Config("mean length != d".into()));
                }
                DVector::from_row_slice(values)
            }
        };
        let cov = match &self.cov {
            CovSpec::Identity => DMatrix::identity(self.d, self.d),
            CovSpec::Scaled { scale } => DMatrix::identity(self.d, self.d) * *scale,
            CovSpec::Spiked { rank, scale } => spiked_covariance(self.d, *rank, *scale, self.seed),
            CovSpec::Explicit { rows } => {
                if rows.len() != self.d || rows.iter().any(|r| r.len() != self.d) {
                    return Err(Error::Config("covariance shape != d x d".into()));
                }
                DMatrix::from_fn(self.d, self.d, |i, j| rows[i][j])
            }
        };
        GaussianParams::new(mean, cov).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `I` plus a random rank-`rank` symmetric perturbation of Frobenius norm
/// `scale`, seeded.
pub fn spiked_covariance(d: usize, rank: usize, scale: f64, seed: u64) -> Matrix {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xc0ffee);
    let mut dirs: Vec<Vector> = Vec::new();
    while dirs.len() < rank.min(d) {
        let mut v = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        for u in &dirs {
            let c = u.dot(&v);
            v -= u * c;
        }
        if v.norm() > 1e-9 {
            let n = v.norm();
            dirs.push(v / n);
        }
    }
    let mut pert = Matrix::zeros(d, d);
    for v in &dirs {
        pert += v * v.transpose() * (scale / (dirs.len() as f64).sqrt());
    }
    Matrix::identity(d, d) + pert
}

/// Result of the end-to-end estimator, with ledger instrumentation.
#[derive(Debug, Clone)]
pub struct GaussianEstimate {
    pub mean: Vector,
    pub covariance: Matrix,
    /// Filtering trace of the covariance stage (indices into the paired
    /// set) and the paired labels when the input was labeled.
    pub cov_trace: RunTrace,
    pub pair_labels: Option<Vec<Label>>,
    pub mean_trace: RunTrace,
}

/// Full parameter recovery from an `eps`-corrupted set: splits rows
/// 45/45/10, pairs the first two slices as `(X_i - X_{m+i})/sqrt(2)` to
/// symmetrize (doubling the corruption rate), recovers the covariance on
/// the pairs, whitens the held-out slice by its inverse square root, and
/// robustly recovers the whitened mean.
pub fn recover_gaussian(
    set: &ContaminatedSet,
    epsilon: f64,
    delta: f64,
    caps: &Caps,
    seed: u64,
) -> Result<GaussianEstimate> {
    let n = set.n();
    let d = set.samples.ncols();
    let m = (n as f64 * 0.45) as usize;
    let mean_rows = n - 2 * m;
    if m < 2 || mean_rows < 2 {
        return Err(Error::InsufficientSamples(format!(
            "{n} samples cannot be split into pairing and mean slices"
        )));
    }

    // pairing: corruption at most doubles; a pair is bad iff either parent is
    let mut pairs = DMatrix::zeros(m, d);
    for i in 0..m {
        let row = (set.samples.row(i) - set.samples.row(m + i)) / std::f64::consts::SQRT_2;
        pairs.row_mut(i).copy_from(&row);
    }
    let pair_labels = set.labels.as_ref().map(|ls| {
        (0..m)
            .map(|i| {
                if ls[i] == Label::Adversarial || ls[m + i] == Label::Adversarial {
                    Label::Adversarial
                } else {
                    Label::Good
                }
            })
            .collect::<Vec<_>>()
    });

    let eps_pairs = (2.0 * epsilon).min(1.0 / 3.0);
    let cov_est = recover_cov(&pairs, eps_pairs, delta, caps, seed)?;

    // mean stage on the fresh slice, whitened by the covariance estimate
    let fresh = set.samples.view((2 * m, 0), (mean_rows, d)).into_owned();
    let inv_half = psd_inv_sqrt(&cov_est.covariance)?;
    let white = &fresh * inv_half.transpose();
    let mean_opts = MeanOptions {
        chi: 2.0 * epsilon,
        ..Default::default()
    };
    let mean_est = recover_mean(&white, epsilon.min(crate::constants::EPS0_MEAN), delta, &mean_opts)?;
    let mean = psd_sqrt(&cov_est.covariance)? * &mean_est.mean;

    Ok(GaussianEstimate {
        mean,
        covariance: cov_est.covariance,
        cov_trace: cov_est.trace,
        pair_labels,
        mean_trace: mean_est.trace,
    })
}

/// Composite TV proxy between `N(mu1, S1)` and `N(mu2, S2)`: the exact
/// identity-covariance mean term after whitening by `S1`, plus the
/// Frobenius bound path `|S1^{-1/2} S2 S1^{-1/2} - I|_F / (2 sqrt 2)`,
/// capped at 1.
pub fn tv_proxy(est_mean: &Vector, est_cov: &Matrix, mean: &Vector, cov: &Matrix) -> Result<f64> {
    let inv_half = psd_inv_sqrt(est_cov)?;
    let mean_term = tv_identity_cov(&(&inv_half * est_mean), &(&inv_half * mean))?;
    let d = cov.nrows();
    let cov_term =
        (&inv_half * cov * &inv_half - Matrix::identity(d, d)).norm() / (2.0 * std::f64::consts::SQRT_2);
    Ok((mean_term + cov_term).min(1.0))
}

/// One line of the benchmark report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub trial: String,
    pub seed: u64,
    pub adversary: String,
    pub estimator: String,
    pub d: usize,
    pub n: usize,
    pub epsilon: f64,
    pub robust_mean_err: f64,
    pub robust_cov_err: f64,
    pub robust_tv_proxy: f64,
    pub empirical_mean_err: f64,
    pub empirical_cov_err: f64,
    pub empirical_tv_proxy: f64,
    pub good_lost_fraction: f64,
    pub delta_trace: String,
    pub wall_ms: u64,
}

fn adversary_name(a: &AdversaryStrategy) -> String {
    match a {
        AdversaryStrategy::TailShift { .. } => "tail_shift".into(),
        AdversaryStrategy::DenseCluster { .. } => "dense_cluster".into(),
        AdversaryStrategy::HuberMaxDensity => "huber_max_density".into(),
        AdversaryStrategy::SubtractiveTruncation { .. } => "subtractive_truncation".into(),
        AdversaryStrategy::VarianceInflation { .. } => "variance_inflation".into(),
        AdversaryStrategy::Custom { .. } => "custom".into(),
    }
}

fn estimator_name(e: EstimatorKind) -> &'static str {
    match e {
        EstimatorKind::Empirical => "empirical",
        EstimatorKind::Mean => "mean",
        EstimatorKind::Cov => "cov",
        EstimatorKind::Full => "full",
    }
}

/// Ledger of every filtering round of a trace against labeled ground truth.
pub fn ledger_trace(
    samples_len: usize,
    labels: &[Label],
    trace: &RunTrace,
) -> Result<Vec<crate::contamination::DeltaLedger>> {
    let set = ContaminatedSet {
        samples: DMatrix::zeros(samples_len, 1),
        labels: Some(labels.to_vec()),
        epsilon: 0.0,
    };
    let mut out = Vec::with_capacity(trace.kept_rounds.len() + 1);
    out.push(delta_ledger(&set, &(0..samples_len).collect::<Vec<_>>())?);
    for kept in &trace.kept_rounds {
        out.push(delta_ledger(&set, kept)?);
    }
    Ok(out)
}

fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<ReportRow> {
    let params = config.target()?;
    let trial_seed = config
        .seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(trial as u64);
    let clean_n = ((config.n as f64) * (1.0 - config.epsilon)).round() as usize;
    let clean = sample_gaussian(&params, clean_n.max(2), trial_seed)?;
    let corrupted = corrupt(&clean, config.epsilon, &config.adversary, trial_seed ^ 0xad)?;

    let start = std::time::Instant::now();

    // empirical baseline
    let (emp_mean, emp_cov) = empirical_moments(&corrupted.samples, None)?;
    let empirical_mean_err = (&emp_mean - &params.mean).norm();
    let empirical_cov_err = mahalanobis_error(&emp_cov, &params.covariance).unwrap_or(f64::NAN);
    let empirical_tv =
        tv_proxy(&emp_mean, &emp_cov, &params.mean, &params.covariance).unwrap_or(1.0);

    let d = config.d;
    let (robust_mean, robust_cov, good_lost, delta_trace) = match config.estimator {
        EstimatorKind::Empirical => (emp_mean.clone(), emp_cov.clone(), 0.0, String::new()),
        EstimatorKind::Mean => {
            let est = recover_mean(
                &corrupted.samples,
                config.epsilon.min(crate::constants::EPS0_MEAN),
                config.delta,
                &MeanOptions::default(),
            )?;
            let (lost, trace_str) = trace_summary(&corrupted, &est.trace)?;
            (est.mean, DMatrix::identity(d, d), lost, trace_str)
        }
        EstimatorKind::Cov => {
            let est = recover_cov(
                &corrupted.samples,
                config.epsilon,
                config.delta,
                &config.caps,
                trial_seed ^ 0xc0,
            )?;
            let (lost, trace_str) = trace_summary(&corrupted, &est.trace)?;
            (DVector::zeros(d), est.covariance, lost, trace_str)
        }
        EstimatorKind::Full => {
            let est = recover_gaussian(
                &corrupted,
                config.epsilon,
                config.delta,
                &config.caps,
                trial_seed ^ 0xf1,
            )?;
            let (lost, trace_str) = match &est.pair_labels {
                Some(ls) => {
                    let ledgers = ledger_trace(ls.len(), ls, &est.cov_trace)?;
                    (
                        good_lost_fraction(ls, &est.cov_trace),
                        ledgers
                            .iter()
                            .map(|l| format!("{:.4}", l.delta))
                            .collect::<Vec<_>>()
                            .join(">"),
                    )
                }
                None => (0.0, String::new()),
            };
            (est.mean, est.covariance, lost, trace_str)
        }
    };

    let wall_ms = if config.record_timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };

    Ok(ReportRow {
        trial: trial.to_string(),
        seed: trial_seed,
        adversary: adversary_name(&config.adversary),
        estimator: estimator_name(config.estimator).to_string(),
        d: config.d,
        n: config.n,
        epsilon: config.epsilon,
        robust_mean_err: (&robust_mean - &params.mean).norm(),
        robust_cov_err: mahalanobis_error(&robust_cov, &params.covariance).unwrap_or(f64::NAN),
        robust_tv_proxy: tv_proxy(&robust_mean, &robust_cov, &params.mean, &params.covariance)
            .unwrap_or(1.0),
        empirical_mean_err,
        empirical_cov_err,
        empirical_tv_proxy: empirical_tv,
        good_lost_fraction: good_lost,
        delta_trace,
        wall_ms,
    })
}

fn good_lost_fraction(labels: &[Label], trace: &RunTrace) -> f64 {
    let total_good = labels.iter().filter(|l| **l == Label::Good).count() as f64;
    if total_good == 0.0 {
        return 0.0;
    }
    match trace.kept_rounds.last() {
        None => 0.0,
        Some(kept) => {
            let good_kept = kept.iter().filter(|&&r| labels[r] == Label::Good).count() as f64;
            (total_good - good_kept) / total_good
        }
    }
}

fn trace_summary(set: &ContaminatedSet, trace: &RunTrace) -> Result<(f64, String)> {
    match &set.labels {
        None => Ok((0.0, String::new())),
        Some(ls) => {
            let ledgers = ledger_trace(set.n(), ls, trace)?;
            Ok((
                good_lost_fraction(ls, trace),
                ledgers
                    .iter()
                    .map(|l| format!("{:.4}", l.delta))
                    .collect::<Vec<_>>()
                    .join(">"),
            ))
        }
    }
}

/// Runs every trial of a configuration (in parallel, with per-trial RNG
/// streams) and returns the per-trial rows plus a trailing aggregate row of
/// medians. Identical config and seed give identical rows.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ReportRow>> {
    config.validate()?;
    let mut rows: Vec<(usize, ReportRow)> = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, t).map(|r| (t, r)))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|(t, _)| *t);
    let mut rows: Vec<ReportRow> = rows.into_iter().map(|(_, r)| r).collect();

    let median_of = |f: &dyn Fn(&ReportRow) -> f64| -> f64 {
        let vals: Vec<f64> = rows.iter().map(f).collect();
        crate::univariate::median(&vals).unwrap_or(f64::NAN)
    };
    let aggregate = ReportRow {
        trial: "median".into(),
        seed: config.seed,
        adversary: adversary_name(&config.adversary),
        estimator: estimator_name(config.estimator).to_string(),
        d: config.d,
        n: config.n,
        epsilon: config.epsilon,
        robust_mean_err: median_of(&|r| r.robust_mean_err),
        robust_cov_err: median_of(&|r| r.robust_cov_err),
        robust_tv_proxy: median_of(&|r| r.robust_tv_proxy),
        empirical_mean_err: median_of(&|r| r.empirical_mean_err),
        empirical_cov_err: median_of(&|r| r.empirical_cov_err),
        empirical_tv_proxy: median_of(&|r| r.empirical_tv_proxy),
        good_lost_fraction: median_of(&|r| r.good_lost_fraction),
        delta_trace: String::new(),
        wall_ms: if config.record_timing {
            let mut w: Vec<u64> = rows.iter().map(|r| r.wall_ms).collect();
            w.sort_unstable();
            w[(w.len().max(1) + 1) / 2 - 1]
        } else {
            0
        },
    };
    rows.push(aggregate);
    Ok(rows)
}

/// Writes report rows as RFC-4180 CSV with a header row.
pub fn write_report_csv(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<()> {
    let path = path.as_ref();
    let file =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}
