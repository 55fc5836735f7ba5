//! `rg`: generate corrupted Gaussian samples, run the robust estimators,
//! and benchmark them against the empirical baseline.
//!
//! Exit codes: 0 success, 2 configuration error, 3 insufficient samples,
//! 4 internal invariant violation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rgauss::contamination::corrupt;
use rgauss::cov::recover_cov;
use rgauss::gaussian::sample_gaussian;
use rgauss::harness::{
    recover_gaussian, run_experiment, write_report_csv, EstimatorKind, ExperimentConfig,
};
use rgauss::mean::{recover_mean, MeanOptions};
use rgauss::{Caps, Error};

#[derive(Parser)]
#[command(name = "rg", version, about = "Robust Gaussian estimation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Seed override for randomized steps.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Caps, e.g. `k=6,lowdim=6,stitch-m=512`.
    #[arg(long, global = true, value_parser = parse_caps)]
    caps: Option<Caps>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Gaussian from a config file and corrupt it.
    Corrupt(CorruptArgs),
    /// Run an estimator on a stored sample set.
    Estimate(EstimateArgs),
    /// Run a benchmark config and write a CSV report.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CorruptArgs {
    /// Experiment config JSON (d, n, epsilon, gaussian, adversary).
    #[arg(long)]
    config: PathBuf,
    /// Output path (`.csv` for CSV, otherwise binary).
    #[arg(long)]
    out: PathBuf,
    /// Drop the ground-truth label column.
    #[arg(long)]
    no_labels: bool,
}

#[derive(Args)]
struct EstimateArgs {
    /// Input sample file (binary or `.csv`).
    #[arg(long = "in")]
    input: PathBuf,
    /// Corruption fraction to assume.
    #[arg(long)]
    eps: f64,
    /// Which parameters to estimate.
    #[arg(long, value_parser = ["mean", "cov", "full"])]
    mode: String,
    /// Output JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Input carries a trailing 0/1 label column.
    #[arg(long)]
    labeled: bool,
    /// Failure probability budget.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// CSV report path.
    #[arg(long)]
    csv: PathBuf,
}

fn parse_caps(s: &str) -> Result<Caps, String> {
    let mut caps = Caps::default();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| format!("bad caps entry `{part}`, expected key=value"))?;
        let value: usize = value
            .trim()
            .parse()
            .map_err(|e| format!("bad caps value in `{part}`: {e}"))?;
        match key.trim() {
            "k" => caps.k = value,
            "lowdim" => caps.lowdim = value,
            "stitch-m" | "stitch_m" => caps.stitch_m = value,
            other => return Err(format!("unknown cap `{other}`")),
        }
    }
    Ok(caps)
}

#[derive(Serialize)]
struct EstimateOutput {
    mode: String,
    epsilon: f64,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidInput(_) | Error::Config(_) | Error::Io { .. } => 2,
        Error::InsufficientSamples(_) => 3,
        Error::GoodnessViolated(_) | Error::Internal(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("rg: failed to configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rg: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cli: Cli) -> rgauss::Result<()> {
    match cli.command {
        Command::Corrupt(args) => {
            let mut config = ExperimentConfig::from_json_file(&args.config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            let params = config.target()?;
            let clean_n = ((config.n as f64) * (1.0 - config.epsilon)).round() as usize;
            let clean = sample_gaussian(&params, clean_n.max(2), config.seed)?;
            let mut set = corrupt(&clean, config.epsilon, &config.adversary, config.seed ^ 0xad)?;
            if args.no_labels {
                set.labels = None;
            }
            rgauss::io::write_set(&args.out, &set)?;
            eprintln!(
                "rg: wrote {} samples (d={}, eps={}) to {}",
                set.n(),
                config.d,
                config.epsilon,
                args.out.display()
            );
            Ok(())
        }
        Command::Estimate(args) => {
            let seed = cli.seed.unwrap_or(0);
            let caps = cli.caps.unwrap_or_default();
            let set = rgauss::io::read_set(&args.input, args.labeled, args.eps)?;
            let d = set.samples.ncols();
            let (mean, covariance) = match args.mode.as_str() {
                "mean" => {
                    let est = recover_mean(
                        &set.samples,
                        args.eps.min(rgauss::constants::EPS0_MEAN),
                        args.delta,
                        &MeanOptions {
                            lowdim_cap: caps.lowdim,
                            ..Default::default()
                        },
                    )?;
                    (est.mean, rgauss::Matrix::identity(d, d))
                }
                "cov" => {
                    let est = recover_cov(&set.samples, args.eps, args.delta, &caps, seed)?;
                    (rgauss::Vector::zeros(d), est.covariance)
                }
                "full" => {
                    let est = recover_gaussian(&set, args.eps, args.delta, &caps, seed)?;
                    (est.mean, est.covariance)
                }
                _ => unreachable!("clap restricts the mode"),
            };
            let out = EstimateOutput {
                mode: args.mode,
                epsilon: args.eps,
                mean: mean.iter().copied().collect(),
                covariance: (0..d)
                    .map(|i| (0..d).map(|j| covariance[(i, j)]).collect())
                    .collect(),
            };
            let text = serde_json::to_string_pretty(&out)
                .map_err(|e| Error::Config(e.to_string()))?;
            std::fs::write(&args.out, text)
                .map_err(|e| Error::io(args.out.display().to_string(), e))?;
            eprintln!("rg: wrote estimate to {}", args.out.display());
            Ok(())
        }
        Command::Bench(args) => {
            let mut config = ExperimentConfig::from_json_file(&args.config)?;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            if let Some(caps) = cli.caps {
                config.caps = caps;
            }
            let rows = run_experiment(&config)?;
            write_report_csv(&args.csv, &rows)?;
            let median = rows.last().expect("aggregate row");
            eprintln!(
                "rg: {} trials ({}, {}): median robust tv {:.4} vs empirical {:.4} -> {}",
                config.trials,
                median.adversary,
                estimator_label(config.estimator),
                median.robust_tv_proxy,
                median.empirical_tv_proxy,
                args.csv.display()
            );
            Ok(())
        }
    }
}

fn estimator_label(kind: EstimatorKind) -> &'static str {
    match kind {
        EstimatorKind::Empirical => "empirical",
        EstimatorKind::Mean => "mean",
        EstimatorKind::Cov => "cov",
        EstimatorKind::Full => "full",
    }
}
