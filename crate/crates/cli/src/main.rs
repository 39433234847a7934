//! Command-line surface over the detection library.
//!
//! Each subcommand wraps one library operation; `run` executes the full
//! pipeline from a JSON spec. Failures print a single JSON object to stderr
//! and exit 2 for usage errors (bad flags, invalid configuration) or 1 for
//! runtime errors.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use oodkit_core::combine::CombineMethod;
use oodkit_core::stats::StatisticKind;

mod commands;

#[derive(Parser)]
#[command(name = "oodkit", version, about = "Out-of-distribution detection from generative model statistics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a generative model on an IDX data file.
    Fit(FitArgs),
    /// Estimate training moments and the information diagonal.
    Fim(FimArgs),
    /// Evaluate batch statistics against a training summary.
    Stats(StatsArgs),
    /// Bootstrap the null distribution of one statistic.
    Calibrate(CalibrateArgs),
    /// Look statistics up in null files to get per-unit p-values.
    Pvalues(PvaluesArgs),
    /// Combine per-statistic p-values into one score per unit.
    Combine(CombineArgs),
    /// Benjamini-Hochberg decisions at a target false discovery rate.
    Bh(BhArgs),
    /// Ranking quality of scores or combined values against labels.
    Auroc(AurocArgs),
    /// Run the full pipeline from a JSON experiment spec.
    Run(RunArgs),
    /// Analytic failure modes of single-statistic detectors on a Gaussian.
    GaussianDemo(GaussianDemoArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Model family: gaussian, gmm, or ppca.
    #[arg(long)]
    model: String,
    /// Training data, IDX format.
    #[arg(long)]
    data: PathBuf,
    /// Fix every variance at one instead of fitting it (gaussian only).
    #[arg(long)]
    mean_only: bool,
    /// Number of mixture components (gmm only).
    #[arg(long)]
    k: Option<usize>,
    /// Latent dimension (ppca only).
    #[arg(long)]
    q: Option<usize>,
    /// RNG seed for EM initialization. Falls back to OODKIT_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FimArgs {
    /// Gradient records of the training data.
    #[arg(long, conflicts_with_all = ["model", "data"])]
    records: Option<PathBuf>,
    /// Model file; computes records on the fly from --data.
    #[arg(long, requires = "data")]
    model: Option<PathBuf>,
    /// Training data, IDX format.
    #[arg(long, requires = "model")]
    data: Option<PathBuf>,
    /// Ridge added to the information diagonal.
    #[arg(long, default_value_t = oodkit_core::fim::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Exponent applied to the information diagonal before whitening.
    #[arg(long, default_value_t = oodkit_core::fim::DEFAULT_XI)]
    xi: f64,
    /// Output summary file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Gradient records of the evaluation data.
    #[arg(long, conflicts_with_all = ["model", "data"])]
    records: Option<PathBuf>,
    /// Model file; computes records on the fly from --data.
    #[arg(long, requires = "data")]
    model: Option<PathBuf>,
    /// Evaluation data, IDX format.
    #[arg(long, requires = "model")]
    data: Option<PathBuf>,
    /// Training summary the statistics are measured against.
    #[arg(long)]
    summary: PathBuf,
    /// Comma-separated statistic kinds.
    #[arg(long, value_delimiter = ',', default_values = ["typicality", "score"])]
    kinds: Vec<StatisticKind>,
    /// Examples per evaluation batch; trailing partial batches are dropped.
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    /// Output CSV of (id, kind, value) rows.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Gradient records of the validation data.
    #[arg(long)]
    records: PathBuf,
    /// Training summary the statistic is measured against.
    #[arg(long)]
    summary: PathBuf,
    /// Statistic kind to calibrate.
    #[arg(long)]
    kind: StatisticKind,
    /// Resampling scheme: per-example, without-replacement, with-replacement.
    #[arg(long, default_value = "without-replacement")]
    plan: String,
    /// Number of bootstrap datasets.
    #[arg(long, default_value_t = oodkit_core::calibration::DEFAULT_N_DATASETS)]
    n_datasets: usize,
    /// Examples per bootstrap dataset; must match the evaluation batch size.
    #[arg(long, default_value_t = 1)]
    dataset_size: usize,
    /// RNG seed for the resampling. Falls back to OODKIT_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Model file whose fingerprint is stored in the null (0 when absent).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output null file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PvaluesArgs {
    /// Statistics CSV from `stats`.
    #[arg(long)]
    stats: PathBuf,
    /// Null files, one per statistic kind present in the CSV.
    #[arg(long, required = true)]
    null: Vec<PathBuf>,
    /// Output CSV of (id, kind, p_value) rows.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CombineArgs {
    /// P-value CSV from `pvalues`.
    #[arg(long)]
    pvalues: PathBuf,
    /// Combination method: fisher or harmonic.
    #[arg(long, default_value = "fisher")]
    method: CombineMethod,
    /// Output CSV of combined scores.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BhArgs {
    /// Combined-score CSV from `combine`.
    #[arg(long)]
    combined: PathBuf,
    /// Target false discovery rate.
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Output CSV of (id, p_value, rejected) rows.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth labels; enables the error-curve output.
    #[arg(long, requires = "curves")]
    labels: Option<PathBuf>,
    /// Output CSV of realized error rates across --alphas.
    #[arg(long, requires = "labels")]
    curves: Option<PathBuf>,
    /// Comma-separated levels for the error curves.
    #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5])]
    alphas: Vec<f64>,
}

#[derive(Args)]
struct AurocArgs {
    /// Statistics CSV; one AUROC row per statistic kind.
    #[arg(long, conflicts_with = "combined")]
    stats: Option<PathBuf>,
    /// Combined-score CSV; one AUROC row per combination method.
    #[arg(long)]
    combined: Option<PathBuf>,
    /// Ground-truth labels per unit id.
    #[arg(long)]
    labels: PathBuf,
    /// Output CSV of (name, auroc) rows.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment spec.
    #[arg(long)]
    spec: PathBuf,
}

#[derive(Args)]
struct GaussianDemoArgs {
    /// Data dimension.
    #[arg(long = "d")]
    d: usize,
    /// Examples per evaluation batch.
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    /// RNG seed.
    #[arg(long)]
    seed: u64,
    /// Output CSV with one AUROC row per statistic.
    #[arg(long, default_value = "auroc.csv")]
    out: PathBuf,
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            fail("usage", &e.to_string(), 2);
        }
    };
    let result = match cli.command {
        Command::Fit(args) => commands::fit(args),
        Command::Fim(args) => commands::fim(args),
        Command::Stats(args) => commands::stats(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Pvalues(args) => commands::pvalues(args),
        Command::Combine(args) => commands::combine(args),
        Command::Bh(args) => commands::bh(args),
        Command::Auroc(args) => commands::auroc(args),
        Command::Run(args) => commands::run(args),
        Command::GaussianDemo(args) => commands::gaussian_demo(args),
    };
    if let Err(err) = result {
        if err.is_usage() {
            fail("usage", &err.to_string(), 2);
        }
        fail("runtime", &err.to_string(), 1);
    }
}

fn fail(kind: &str, message: &str, code: i32) -> ! {
    eprintln!(
        "{}",
        serde_json::json!({ "kind": kind, "error": message })
    );
    std::process::exit(code);
}
