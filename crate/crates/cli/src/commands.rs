use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use plreg::diagnostics::{self, BenchmarkConfig, BenchmarkDataset, PathConfig};
use plreg::em::{self, InitScheme};
use plreg::gibbs;
use plreg::io::{self as pio, CsvOptions, DatasetEntry, IoError, LoadedData, ModelArtifact, ModelParams, RunConfig};
use plreg::logit::{self, LogitDesign};
use plreg::variational::{self, PredictionMode};
use plreg::{Design, FeatureMap, RngStream};
use serde_json::json;

use crate::{ChainArgs, Cli, Command, DataArgs, PriorArgs};

/// A failed run: a stable kind, its exit code and a message.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: String) -> Self {
        Self {
            kind: "usage",
            code: 2,
            message,
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self {
            kind: "config",
            code: 3,
            message: message.into(),
        }
    }

    fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            kind: "output",
            code: 6,
            message: format!("cannot write {}: {e}", path.display()),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }

    /// One line of JSON on standard error.
    pub fn report(&self) {
        let body = json!({
            "error": { "kind": self.kind, "code": self.code, "message": self.message.trim_end() }
        });
        eprintln!("{body}");
    }
}

impl From<plreg::Error> for Failure {
    fn from(e: plreg::Error) -> Self {
        let (kind, code) = match &e {
            plreg::Error::Io(IoError::Config(_)) => ("config", 3),
            plreg::Error::Io(IoError::Write { .. }) => ("output", 6),
            plreg::Error::Io(_) | plreg::Error::Model(_) => ("data", 4),
            _ => ("fit", 5),
        };
        Self {
            kind,
            code,
            message: e.to_string(),
        }
    }
}

macro_rules! impl_from_module_error {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                plreg::Error::from(e).into()
            }
        }
    )*};
}

impl_from_module_error!(
    IoError,
    plreg::model::ModelError,
    plreg::em::EmError,
    plreg::gibbs::GibbsError,
    plreg::variational::VbError,
    plreg::logit::LogitError,
    plreg::diagnostics::DiagnosticsError
);

type Outcome<T = ()> = Result<T, Failure>;

pub fn run(cli: Cli) -> Outcome {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or_else(time_seed);
    config.seed = Some(seed);
    log::info!("seed {seed}");
    let out = cli.output.as_deref();
    match &cli.command {
        Command::FitEm(args) => {
            apply_data(&mut config, &args.data);
            apply_prior(&mut config, &args.prior);
            if let Some(v) = args.max_iters {
                config.em.max_iters = v;
            }
            if let Some(v) = args.tol {
                config.em.rel_tol = v;
            }
            if args.prior_init {
                config.em.init = InitScheme::PriorDraw;
            }
            fit_em(&config, seed, out)
        }
        Command::FitGibbs(args) => {
            apply_data(&mut config, &args.data);
            apply_prior(&mut config, &args.prior);
            apply_chain(&mut config.gibbs.burn_in, &mut config.gibbs.samples, &mut config.gibbs.thin, &args.chain);
            config.gibbs.sample_hyper_a |= args.sample_a;
            config.gibbs.rescale_lambda |= args.rescale;
            fit_gibbs(&config, seed, out, args.chain.chain.as_deref())
        }
        Command::FitVb(args) => {
            apply_data(&mut config, &args.data);
            apply_prior(&mut config, &args.prior);
            if let Some(v) = args.max_iters {
                config.vb.max_iters = v;
                config.type2.vb.max_iters = v;
            }
            if let Some(v) = args.tol {
                config.vb.rel_tol = v;
                config.type2.vb.rel_tol = v;
            }
            let prediction = match args.monte_carlo {
                Some(draws) => PredictionMode::MonteCarlo { draws, seed },
                None => PredictionMode::PlugIn,
            };
            fit_vb(&config, seed, out, args.type2, prediction)
        }
        Command::FitLogit(args) => {
            apply_data(&mut config, &args.data);
            let l = &mut config.logit;
            apply_chain(&mut l.burn_in, &mut l.samples, &mut l.thin, &args.chain);
            if let Some(v) = args.c {
                l.hyper_c = v;
            }
            if let Some(v) = args.d {
                l.hyper_d = v;
            }
            if args.no_intercept {
                l.intercept = false;
            }
            fit_logit(&config, seed, out, args.chain.chain.as_deref())
        }
        Command::Predict(args) => predict(&args.model, &args.data, args.predictions.as_deref()),
        Command::Regpath(args) => {
            apply_data(&mut config, &args.data);
            if let Some(grid) = &args.grid {
                config.regpath.grid = grid.clone();
            }
            if let Some(e) = args.estimator {
                config.regpath.estimator = e;
            }
            if let Some(b) = args.b {
                config.prior.b = b;
            }
            regpath(&config, seed, out, args.csv.as_deref())
        }
        Command::Benchmark(args) => {
            let bench = &mut config.benchmark;
            if !args.dataset.is_empty() {
                bench.datasets = args
                    .dataset
                    .iter()
                    .map(|(name, path, label)| DatasetEntry {
                        name: name.clone(),
                        path: path.clone(),
                        label: label.clone().unwrap_or_else(|| "class".into()),
                    })
                    .collect();
            }
            if let Some(m) = &args.methods {
                bench.methods = m.clone();
            }
            if let Some(r) = args.replications {
                bench.replications = r;
            }
            if let Some(f) = args.train_fraction {
                bench.train_fraction = f;
            }
            bench.compute_ess &= !args.no_ess;
            bench.parallel &= !args.sequential;
            if let Some(v) = args.burn_in {
                config.gibbs.burn_in = v;
                config.logit.burn_in = v;
            }
            if let Some(v) = args.samples {
                config.gibbs.samples = v;
                config.logit.samples = v;
            }
            benchmark(&config, seed, out, args.errors_csv.as_deref(), args.efficiency_csv.as_deref())
        }
        Command::DiagnoseEss(args) => diagnose_ess(&args.chain, args.wall_time, out),
    }
}

fn time_seed() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

fn apply_data(config: &mut RunConfig, args: &DataArgs) {
    if let Some(p) = &args.data {
        config.data.path = Some(p.clone());
    }
    if let Some(l) = &args.label {
        config.data.label = l.clone();
    }
    if args.no_standardize {
        config.data.standardize = false;
    }
    if !args.interaction.is_empty() {
        config.data.interactions = args.interaction.clone();
    }
}

fn apply_prior(config: &mut RunConfig, args: &PriorArgs) {
    if let Some(a) = args.a {
        config.prior.a = a;
    }
    if let Some(b) = args.b {
        config.prior.b = b;
    }
}

fn apply_chain(burn_in: &mut usize, samples: &mut usize, thin: &mut usize, args: &ChainArgs) {
    if let Some(v) = args.burn_in {
        *burn_in = v;
    }
    if let Some(v) = args.samples {
        *samples = v;
    }
    if let Some(v) = args.thin {
        *thin = v;
    }
}

fn training_data(config: &RunConfig) -> Outcome<LoadedData> {
    config.validate()?;
    let path = config
        .data
        .path
        .as_ref()
        .ok_or_else(|| Failure::config("no training data: pass --data or set data.path"))?;
    let data = pio::load_csv(
        path,
        &config.data.label,
        &CsvOptions {
            standardize: config.data.standardize,
        },
    )?;
    pio::require_training_classes(&data)?;
    log::info!(
        "{}: n = {}, d = {}, classes {:?}",
        path.display(),
        data.dataset.n(),
        data.dataset.d(),
        data.label_names
    );
    Ok(data)
}

fn pl_design(config: &RunConfig, data: &LoadedData) -> Outcome<(FeatureMap, Design)> {
    let map = config.feature_map(data.dataset.d())?;
    let design = map.design(&data.dataset)?;
    Ok((map, design))
}

fn artifact(data: &LoadedData, map: Option<FeatureMap>, seed: u64, params: ModelParams) -> ModelArtifact {
    ModelArtifact::new(
        data.covariate_names.clone(),
        data.label_names.clone(),
        data.standardization.clone(),
        map,
        Some(seed),
        params,
    )
}

fn write_text(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(path) => std::fs::write(path, format!("{text}\n")).map_err(|e| Failure::output(path, e)),
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| Failure::output(Path::new("<stdout>"), e))
        }
    }
}

fn write_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::config(e.to_string()))?;
    write_text(out, &text)
}

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::output(path, e))
}

fn write_chain(chain: &plreg::Chain, path: Option<&Path>) -> Outcome {
    if let Some(path) = path {
        chain.write_csv(create(path)?).map_err(|e| Failure::output(path, e))?;
    }
    Ok(())
}

fn fit_em(config: &RunConfig, seed: u64, out: Option<&Path>) -> Outcome {
    let data = training_data(config)?;
    let (map, design) = pl_design(config, &data)?;
    let (a, b) = (config.prior.a, config.prior.b);
    let trace = em::fit_map(&design, a, b, &config.em, &mut RngStream::new(seed))?;
    log::info!(
        "EM: {} iterations, converged {}, {} exact zeros",
        trace.iterations,
        trace.converged,
        trace.sparsity.len()
    );
    if !trace.converged {
        log::warn!("EM stopped after {} iterations without meeting the tolerance", trace.iterations);
    }
    let params = ModelParams::Em {
        hyper_a: a,
        hyper_b: b,
        normalized: trace.weights.normalized(),
        total_mass: trace.weights.total_mass(),
        zero_pattern: trace.sparsity,
        objective: trace.objective,
    };
    write_json(out, &artifact(&data, Some(map), seed, params))
}

fn fit_gibbs(config: &RunConfig, seed: u64, out: Option<&Path>, chain_csv: Option<&Path>) -> Outcome {
    let data = training_data(config)?;
    let (map, design) = pl_design(config, &data)?;
    let (a, b) = (config.prior.a, config.prior.b);
    let start = Instant::now();
    let chain = gibbs::run_chain(&design, a, b, &config.gibbs, &mut RngStream::new(seed))?;
    log::info!("Gibbs: {} draws in {:.2}s", chain.len(), start.elapsed().as_secs_f64());
    if let Some(rate) = chain.mh_acceptance_rate() {
        log::info!("MH acceptance on a: {rate:.3}");
    }
    write_chain(&chain, chain_csv)?;
    let params = ModelParams::Gibbs {
        hyper_a: a,
        hyper_b: b,
        chain,
    };
    write_json(out, &artifact(&data, Some(map), seed, params))
}

fn fit_vb(config: &RunConfig, seed: u64, out: Option<&Path>, type2: bool, prediction: PredictionMode) -> Outcome {
    let data = training_data(config)?;
    let (map, design) = pl_design(config, &data)?;
    let b = config.prior.b;
    let (a, state) = if type2 {
        let result = variational::type2_ml_a(&design, b, &config.type2)?;
        log::info!(
            "type-II search: a = {:.4} after {} fits{}",
            result.a_hat,
            result.evaluations.len(),
            if result.used_grid_fallback { " (grid fallback)" } else { "" }
        );
        (result.a_hat, result.state)
    } else {
        let a = config.prior.a;
        (a, variational::fit_vb(&design, a, b, &config.vb)?)
    };
    log::info!("VB: {} iterations, converged {}", state.iterations, state.converged);
    let params = ModelParams::Variational {
        hyper_a: a,
        hyper_b: b,
        shape: state.shape,
        rate: state.rate,
        prediction,
        elbo: state.elbo_trace,
    };
    write_json(out, &artifact(&data, Some(map), seed, params))
}

fn fit_logit(config: &RunConfig, seed: u64, out: Option<&Path>, chain_csv: Option<&Path>) -> Outcome {
    let data = training_data(config)?;
    let design = LogitDesign::new(&data.dataset, config.logit.intercept)?;
    let start = Instant::now();
    let chain = logit::run_logit_chain(&design, &config.logit, &mut RngStream::new(seed))?;
    log::info!("logit: {} draws in {:.2}s", chain.len(), start.elapsed().as_secs_f64());
    write_chain(&chain, chain_csv)?;
    let params = ModelParams::Logit {
        intercept: config.logit.intercept,
        hyper_c: config.logit.hyper_c,
        hyper_d: config.logit.hyper_d,
        chain,
    };
    write_json(out, &artifact(&data, None, seed, params))
}

fn predict(model: &Path, data: &Path, predictions: Option<&Path>) -> Outcome {
    let artifact = ModelArtifact::load(model)?;
    let x = pio::read_covariates(data, &artifact.covariate_names)?;
    let probs = artifact.predict(x.view())?;
    let sink: Box<dyn Write> = match predictions {
        Some(path) => Box::new(create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    let target = predictions.unwrap_or(Path::new("<stdout>"));
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec!["row".to_string()];
    header.extend(artifact.label_names.iter().map(|l| format!("p_{l}")));
    header.push("predicted".into());
    writer.write_record(&header).map_err(|e| Failure::output(target, e))?;
    for (i, row) in probs.rows().into_iter().enumerate() {
        let mut record = vec![(i + 1).to_string()];
        record.extend(row.iter().map(|&p| pio::format_float(p)));
        record.push(artifact.label_names[diagnostics::argmax(row)].clone());
        writer.write_record(&record).map_err(|e| Failure::output(target, e))?;
    }
    writer.flush().map_err(|e| Failure::output(target, e))
}

fn regpath(config: &RunConfig, seed: u64, out: Option<&Path>, csv_out: Option<&Path>) -> Outcome {
    let data = training_data(config)?;
    let (map, design) = pl_design(config, &data)?;
    let path_config = PathConfig {
        hyper_b: config.prior.b,
        em: config.em,
        gibbs: config.gibbs,
        vb: config.vb,
    };
    let path = diagnostics::regularization_path(
        &design,
        &config.regpath.grid,
        config.regpath.estimator,
        &path_config,
        &mut RngStream::new(seed),
    )?;
    for (point, zeros) in path.points.iter().zip(path.zero_counts()) {
        match (&point.error, zeros) {
            (Some(e), _) => log::warn!("a = {}: {e}", point.a),
            (None, Some(z)) => log::info!("a = {}: {z} exact zeros", point.a),
            _ => {}
        }
    }
    if let Some(csv_path) = csv_out {
        path.write_csv(create(csv_path)?).map_err(|e| Failure::output(csv_path, e))?;
    }
    let summary = json!({
        "seed": seed,
        "covariate_names": data.covariate_names,
        "label_names": data.label_names,
        "feature_map": map,
        "hyper_b": config.prior.b,
        "zero_counts": path.zero_counts(),
        "path": path,
    });
    write_json(out, &summary)
}

fn benchmark(
    config: &RunConfig,
    seed: u64,
    out: Option<&Path>,
    errors_csv: Option<&Path>,
    efficiency_csv: Option<&Path>,
) -> Outcome {
    config.validate()?;
    let bench = &config.benchmark;
    if bench.datasets.is_empty() {
        return Err(Failure::config("no datasets: pass --dataset NAME=CSV or set benchmark.datasets"));
    }
    let mut datasets = Vec::with_capacity(bench.datasets.len());
    for entry in &bench.datasets {
        let data = pio::load_csv(&entry.path, &entry.label, &CsvOptions { standardize: false })?;
        pio::require_training_classes(&data)?;
        let mut dataset = BenchmarkDataset::new(&entry.name, data.dataset);
        dataset.feature_map = config.feature_map(dataset.data.d())?;
        datasets.push(dataset);
    }
    let bench_config = BenchmarkConfig {
        replications: bench.replications,
        train_fraction: bench.train_fraction,
        hyper_a: config.prior.a,
        hyper_b: config.prior.b,
        em: config.em,
        gibbs: config.gibbs,
        vb: config.vb,
        logit: config.logit,
        standardize: config.data.standardize,
        compute_ess: bench.compute_ess,
        parallel: bench.parallel,
    };
    let report = diagnostics::benchmark(&datasets, &bench.methods, &bench_config, seed)?;
    eprint!("{}", report.table2_text());
    if bench.compute_ess {
        eprint!("\n{}", report.table3_text());
    }
    if let Some(path) = errors_csv {
        report.write_table2_csv(create(path)?).map_err(|e| Failure::output(path, e))?;
    }
    if let Some(path) = efficiency_csv {
        report.write_table3_csv(create(path)?).map_err(|e| Failure::output(path, e))?;
    }
    write_json(out, &report)
}

fn diagnose_ess(chain_path: &PathBuf, wall_time: Option<f64>, out: Option<&Path>) -> Outcome {
    let chain = pio::read_chain_csv(chain_path)?;
    let report = diagnostics::min_ess_report(&chain, wall_time.unwrap_or(f64::NAN))?;
    log::info!("min ESS {:.1} of {} draws", report.min_ess, chain.len());
    let summary = json!({
        "chain": chain_path,
        "coefficient": chain.coefficient_name,
        "draws": chain.len(),
        "normalized": chain.coefficient_name == "lambda",
        "report": report,
    });
    write_json(out, &summary)
}
