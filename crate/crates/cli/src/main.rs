//! Command-line driver for the `plreg` library.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plreg::diagnostics::{Method, PathEstimator};

/// Plackett-Luce regression: sparse MAP, Gibbs sampling, variational EM
/// and a sparse multinomial-logit baseline.
///
/// Every command reads an optional TOML config; flags override it. Results
/// are written as JSON to `--output` or standard output. Failures print a
/// single JSON object on standard error.
#[derive(Debug, Parser)]
#[command(name = "plreg", version)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Master seed; falls back to the config, then to a time-based seed.
    #[arg(long, global = true, env = "PLREG_SEED")]
    pub seed: Option<u64>,
    /// JSON output path (default: standard output).
    #[arg(long, short, global = true, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Log progress to standard error (repeat for more detail).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sparse MAP weights by EM.
    FitEm(FitEm),
    /// Posterior draws of the weights by Gibbs sampling.
    FitGibbs(FitGibbs),
    /// Mean-field variational posterior of the weights.
    FitVb(FitVb),
    /// Sparse Bayesian multinomial-logit baseline.
    FitLogit(FitLogit),
    /// Class probabilities and predicted labels for new rows.
    Predict(Predict),
    /// Weights along a decreasing grid of the shape `a`.
    Regpath(Regpath),
    /// Misclassification and sampling-efficiency comparison over random splits.
    Benchmark(Benchmark),
    /// Effective sample sizes of a chain CSV.
    DiagnoseEss(DiagnoseEss),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Training CSV with a header row.
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Name of the class column.
    #[arg(long)]
    pub label: Option<String>,
    /// Use covariates as given instead of centering and scaling them.
    #[arg(long)]
    pub no_standardize: bool,
    /// Add exp(x_j + x_l) and exp(-(x_j + x_l)) features; zero-based `j,l`.
    #[arg(long, value_name = "J,L", value_parser = parse_pair)]
    pub interaction: Vec<[usize; 2]>,
}

#[derive(Debug, Args)]
pub struct PriorArgs {
    /// Gamma prior shape.
    #[arg(long)]
    pub a: Option<f64>,
    /// Gamma prior rate.
    #[arg(long)]
    pub b: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Write stored draws as CSV.
    #[arg(long, value_name = "CSV")]
    pub chain: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct FitEm {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Relative change of the objective that stops the iterations.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Start from a prior draw instead of all-ones weights.
    #[arg(long)]
    pub prior_init: bool,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct FitGibbs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Random-walk Metropolis-Hastings on the shape `a`.
    #[arg(long)]
    pub sample_a: bool,
    /// Redraw the total mass from its prior after every sweep.
    #[arg(long)]
    pub rescale: bool,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct FitVb {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub prior: PriorArgs,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// Choose `a` by maximizing the bound (type-II maximum likelihood).
    #[arg(long)]
    pub type2: bool,
    /// Predict by averaging this many draws of the variational posterior
    /// instead of plugging in its mean.
    #[arg(long, value_name = "DRAWS")]
    pub monte_carlo: Option<usize>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct FitLogit {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    /// Gamma shape of the prior on the squared shrinkage parameter.
    #[arg(long)]
    pub c: Option<f64>,
    /// Gamma rate of the prior on the squared shrinkage parameter.
    #[arg(long)]
    pub d: Option<f64>,
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Debug, Args)]
pub struct Predict {
    /// Model JSON written by a fit command.
    #[arg(long, value_name = "JSON")]
    pub model: PathBuf,
    /// CSV holding the model's covariate columns; other columns are ignored.
    #[arg(long, value_name = "CSV")]
    pub data: PathBuf,
    /// Prediction CSV path (default: standard output).
    #[arg(long, value_name = "CSV")]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct Regpath {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated, strictly decreasing shapes.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// map, gibbs-mean, gibbs-median or vb-mean.
    #[arg(long)]
    pub estimator: Option<PathEstimator>,
    #[arg(long)]
    pub b: Option<f64>,
    /// Long-format path CSV (a, k, j, value, estimator).
    #[arg(long, value_name = "CSV")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct Benchmark {
    /// `name=path` or `name=path:label`; repeatable, replaces configured datasets.
    #[arg(long, value_name = "NAME=CSV[:LABEL]", value_parser = parse_dataset)]
    pub dataset: Vec<(String, PathBuf, Option<String>)>,
    /// Comma-separated subset of pl-gibbs, pl-em, pl-vb, sparse-logit.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Skip effective-sample-size computation.
    #[arg(long)]
    pub no_ess: bool,
    /// Run cells one at a time so that timings are uncontended.
    #[arg(long)]
    pub sequential: bool,
    /// Misclassification table as CSV.
    #[arg(long, value_name = "CSV")]
    pub errors_csv: Option<PathBuf>,
    /// Sampling-efficiency table as CSV.
    #[arg(long, value_name = "CSV")]
    pub efficiency_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct DiagnoseEss {
    /// Chain CSV written by fit-gibbs or fit-logit.
    #[arg(long, value_name = "CSV")]
    pub chain: PathBuf,
    /// Sampling time in seconds, for time per effective sample.
    #[arg(long)]
    pub wall_time: Option<f64>,
}

fn parse_pair(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected J,L, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok([parse(a)?, parse(b)?])
}

fn parse_dataset(s: &str) -> Result<(String, PathBuf, Option<String>), String> {
    let (name, rest) = s.split_once('=').ok_or_else(|| format!("expected NAME=CSV[:LABEL], got `{s}`"))?;
    let (path, label) = match rest.rsplit_once(':') {
        Some((p, l)) if !l.contains('/') && !l.contains('\\') && !l.is_empty() => (p, Some(l.to_string())),
        _ => (rest, None),
    };
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected NAME=CSV[:LABEL], got `{s}`"));
    }
    Ok((name.to_string(), PathBuf::from(path), label))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let failure = commands::Failure::usage(e.to_string());
            failure.report();
            return failure.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            failure.report();
            failure.exit_code()
        }
    }
}
