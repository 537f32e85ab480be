use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{min_ess_report, misclassification, DiagnosticsError, EssReport};
use crate::em::{self, EmConfig};
use crate::error::Error;
use crate::gibbs::{self, GibbsConfig};
use crate::io::{format_float, Standardization};
use crate::logit::{self, LogitConfig, LogitDesign};
use crate::model::{self, Dataset, FeatureMap};
use crate::stochastic::RngStream;
use crate::variational::{self, PredictionMode, VbConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PlGibbs,
    PlEm,
    PlVb,
    SparseLogit,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::PlGibbs, Method::PlEm, Method::PlVb, Method::SparseLogit];

    pub fn tag(self) -> &'static str {
        match self {
            Method::PlGibbs => "pl-gibbs",
            Method::PlEm => "pl-em",
            Method::PlVb => "pl-vb",
            Method::SparseLogit => "sparse-logit",
        }
    }

    /// Column heading in the text tables.
    pub fn heading(self) -> &'static str {
        match self {
            Method::PlGibbs => "PL-Gibbs",
            Method::PlEm => "PL-EM",
            Method::PlVb => "PL-VB",
            Method::SparseLogit => "Sp. Logit",
        }
    }

    fn is_sampler(self) -> bool {
        matches!(self, Method::PlGibbs | Method::SparseLogit)
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == s)
            .ok_or_else(|| format!("unknown method `{s}` (pl-gibbs, pl-em, pl-vb, sparse-logit)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkDataset {
    pub name: String,
    /// Raw covariates; standardization is fitted per training split.
    pub data: Dataset,
    pub feature_map: FeatureMap,
}

impl BenchmarkDataset {
    pub fn new(name: &str, data: Dataset) -> Self {
        let feature_map = FeatureMap::default_for(data.d());
        Self {
            name: name.to_string(),
            data,
            feature_map,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkConfig {
    pub replications: usize,
    pub train_fraction: f64,
    pub hyper_a: f64,
    pub hyper_b: f64,
    pub em: EmConfig,
    pub gibbs: GibbsConfig,
    pub vb: VbConfig,
    pub logit: LogitConfig,
    pub standardize: bool,
    pub compute_ess: bool,
    /// Run cells on the rayon pool. Timings are then taken under contention.
    pub parallel: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            replications: 20,
            train_fraction: 2.0 / 3.0,
            hyper_a: 1.0,
            hyper_b: 1.0,
            em: EmConfig::default(),
            gibbs: GibbsConfig::default(),
            vb: VbConfig::default(),
            logit: LogitConfig::default(),
            standardize: true,
            compute_ess: true,
            parallel: true,
        }
    }
}

/// Outcome of one (dataset, method, replication) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub method: Method,
    pub replication: usize,
    pub error_rate: Option<f64>,
    pub n_test: usize,
    /// Fitting wall time in seconds, data preparation excluded.
    pub wall_time: f64,
    pub ess: Option<EssReport>,
    pub failure: Option<String>,
}

/// Aggregate over replications for one (dataset, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub method: Method,
    pub mean_error: f64,
    pub sd_error: f64,
    pub completed: usize,
    pub failed: usize,
    /// Mean over replications of the minimum ESS.
    pub min_ess: Option<f64>,
    /// Mean fitting time in seconds.
    pub time: f64,
    /// `time / min_ess`
    pub time_per_ess: Option<f64>,
    /// Slowest time-per-ESS on the dataset over this row's.
    pub relative_speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub master_seed: u64,
    pub replications: usize,
    pub train_fraction: f64,
    pub rows: Vec<SummaryRow>,
    pub cells: Vec<CellResult>,
}

/// Stratified split: within each class a shuffled `train_fraction` share
/// (rounded, keeping at least one example on each side when the class has
/// two or more) goes to training. Both index lists are sorted.
pub fn stratified_split(labels: &[usize], n_classes: usize, train_fraction: f64, rng: &mut RngStream) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for k in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == k).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(rng);
        let mut take = (train_fraction * idx.len() as f64).round() as usize;
        if idx.len() >= 2 {
            take = take.clamp(1, idx.len() - 1);
        } else {
            take = idx.len();
        }
        train.extend_from_slice(&idx[..take]);
        test.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Runs every (dataset, method, replication) cell. Replication `r` of
/// dataset `i` uses the same split for every method; every cell has its
/// own stream derived from `master_seed`, so the report does not depend on
/// scheduling. Failed cells are recorded, not fatal.
pub fn benchmark(
    datasets: &[BenchmarkDataset],
    methods: &[Method],
    config: &BenchmarkConfig,
    master_seed: u64,
) -> Result<BenchmarkReport, DiagnosticsError> {
    if datasets.is_empty() || methods.is_empty() {
        return Err(DiagnosticsError::Invalid("need at least one dataset and one method".into()));
    }
    if config.replications == 0 || !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(DiagnosticsError::Invalid(format!(
            "replications = {}, train_fraction = {}",
            config.replications, config.train_fraction
        )));
    }
    let mut jobs = Vec::new();
    for (di, _) in datasets.iter().enumerate() {
        for rep in 0..config.replications {
            for (mi, &method) in methods.iter().enumerate() {
                jobs.push((di, rep, mi, method));
            }
        }
    }
    let run = |&(di, rep, mi, method): &(usize, usize, usize, Method)| {
        let ds = &datasets[di];
        let mut split_rng = RngStream::with_stream(master_seed, ((di as u64) << 32) | rep as u64);
        let (train, test) = stratified_split(ds.data.labels(), ds.data.n_classes(), config.train_fraction, &mut split_rng);
        let stream = (1u64 << 63) | ((di as u64) << 40) | ((rep as u64) << 8) | mi as u64;
        let mut rng = RngStream::with_stream(master_seed, stream);
        let outcome = run_cell(ds, method, &train, &test, config, &mut rng);
        let (error_rate, wall_time, ess, failure) = match outcome {
            Ok((e, t, ess)) => (Some(e), t, ess, None),
            Err(e) => {
                log::warn!("{} / {} / replication {rep} failed: {e}", ds.name, method.tag());
                (None, 0.0, None, Some(e.to_string()))
            }
        };
        CellResult {
            dataset: ds.name.clone(),
            method,
            replication: rep,
            error_rate,
            n_test: test.len(),
            wall_time,
            ess,
            failure,
        }
    };
    let cells: Vec<CellResult> = if config.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };

    let mut rows = Vec::new();
    for ds in datasets {
        let first = rows.len();
        for &method in methods {
            let mine: Vec<&CellResult> = cells.iter().filter(|c| c.dataset == ds.name && c.method == method).collect();
            let errors: Vec<f64> = mine.iter().filter_map(|c| c.error_rate).collect();
            let completed = errors.len();
            let mean_error = mean(&errors);
            let sd_error = sample_sd(&errors, mean_error);
            let times: Vec<f64> = mine.iter().filter(|c| c.failure.is_none()).map(|c| c.wall_time).collect();
            let ess: Vec<f64> = mine.iter().filter_map(|c| c.ess.as_ref().map(|e| e.min_ess)).collect();
            let min_ess = (!ess.is_empty()).then(|| mean(&ess));
            let time = mean(&times);
            rows.push(SummaryRow {
                dataset: ds.name.clone(),
                n: ds.data.n(),
                d: ds.data.d(),
                k: ds.data.n_classes(),
                method,
                mean_error,
                sd_error,
                completed,
                failed: mine.len() - completed,
                min_ess,
                time,
                time_per_ess: min_ess.map(|e| time / e),
                relative_speed: None,
            });
        }
        let slowest = rows[first..]
            .iter()
            .filter_map(|r| r.time_per_ess)
            .fold(f64::NAN, f64::max);
        for row in rows[first..].iter_mut() {
            row.relative_speed = row.time_per_ess.map(|t| slowest / t);
        }
    }
    Ok(BenchmarkReport {
        master_seed,
        replications: config.replications,
        train_fraction: config.train_fraction,
        rows,
        cells,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sample_sd(v: &[f64], mean: f64) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn run_cell(
    ds: &BenchmarkDataset,
    method: Method,
    train: &[usize],
    test: &[usize],
    config: &BenchmarkConfig,
    rng: &mut RngStream,
) -> Result<(f64, f64, Option<EssReport>), Error> {
    let train_data = ds.data.subset(train);
    let test_data = ds.data.subset(test);
    let (train_data, test_data) = if config.standardize {
        let s = Standardization::fit(train_data.x());
        (
            Dataset::new(s.apply(train_data.x())?, train_data.labels().to_vec(), train_data.n_classes())?,
            Dataset::new(s.apply(test_data.x())?, test_data.labels().to_vec(), test_data.n_classes())?,
        )
    } else {
        (train_data, test_data)
    };
    let (a, b) = (config.hyper_a, config.hyper_b);
    let k = ds.data.n_classes();
    let mut probs = Array2::zeros((test_data.n(), k));

    if method == Method::SparseLogit {
        let design = LogitDesign::new(&train_data, config.logit.intercept)?;
        let start = Instant::now();
        let chain = logit::run_logit_chain(&design, &config.logit, rng)?;
        let elapsed = start.elapsed().as_secs_f64();
        for (row, mut out) in test_data.x().rows().into_iter().zip(probs.rows_mut()) {
            let x = if design.has_intercept() { design.augment(row) } else { row.to_owned() };
            out.assign(&ndarray::aview1(&logit::logit_predict(&chain, x.view())?));
        }
        let ess = config.compute_ess.then(|| min_ess_report(&chain, elapsed)).transpose()?;
        let err = misclassification(probs.view(), test_data.labels())?;
        return Ok((err, elapsed, ess));
    }

    let design = ds.feature_map.design(&train_data)?;
    let w_test = ds.feature_map.transform_matrix(test_data.x())?;
    let start = Instant::now();
    let mut ess = None;
    match method {
        Method::PlGibbs => {
            let chain = gibbs::run_chain(&design, a, b, &config.gibbs, rng)?;
            let elapsed = start.elapsed().as_secs_f64();
            for (w, mut out) in w_test.axis_iter(Axis(0)).zip(probs.rows_mut()) {
                let p = gibbs::posterior_predict(&chain, w.as_slice().expect("row-major"))?;
                out.assign(&ndarray::aview1(&p));
            }
            if config.compute_ess {
                ess = Some(min_ess_report(&chain, elapsed)?);
            }
            let err = misclassification(probs.view(), test_data.labels())?;
            return Ok((err, elapsed, ess));
        }
        Method::PlEm => {
            let trace = em::fit_map(&design, a, b, &config.em, rng)?;
            for (w, mut out) in w_test.axis_iter(Axis(0)).zip(probs.rows_mut()) {
                let p = model::class_probabilities(w.as_slice().expect("row-major"), trace.weights.lambda.view())?;
                out.assign(&ndarray::aview1(&p));
            }
        }
        Method::PlVb => {
            let state = variational::fit_vb(&design, a, b, &config.vb)?;
            for (w, mut out) in w_test.axis_iter(Axis(0)).zip(probs.rows_mut()) {
                let p = state.predict(w.as_slice().expect("row-major"), PredictionMode::PlugIn)?;
                out.assign(&ndarray::aview1(&p));
            }
        }
        Method::SparseLogit => unreachable!(),
    }
    let elapsed = start.elapsed().as_secs_f64();
    let err = misclassification(probs.view(), test_data.labels())?;
    Ok((err, elapsed, ess))
}

fn fmt_rate(v: f64) -> String {
    if v.is_nan() {
        return "-".into();
    }
    let s = format!("{v:.3}");
    s.strip_prefix('0').map(str::to_string).unwrap_or(s)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.digits$}"),
        _ => "-".into(),
    }
}

impl BenchmarkReport {
    fn datasets(&self) -> Vec<&SummaryRow> {
        let mut seen: Vec<&SummaryRow> = Vec::new();
        for row in &self.rows {
            if !seen.iter().any(|r| r.dataset == row.dataset) {
                seen.push(row);
            }
        }
        seen
    }

    fn methods(&self) -> Vec<Method> {
        let mut seen = Vec::new();
        for row in &self.rows {
            if !seen.contains(&row.method) {
                seen.push(row.method);
            }
        }
        seen
    }

    fn row(&self, dataset: &str, method: Method) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.method == method)
    }

    /// Misclassification rate, mean (sd) over replications, one dataset per
    /// line.
    pub fn table2_text(&self) -> String {
        let methods = self.methods();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Misclassification rate, mean (sd) over {} splits, {:.0}% train",
            self.replications,
            100.0 * self.train_fraction
        );
        let _ = write!(out, "{:<12} {:>5} {:>3} {:>3}", "Dataset", "n", "d", "K");
        for m in &methods {
            let _ = write!(out, "  {:>14}", m.heading());
        }
        out.push('\n');
        for ds in self.datasets() {
            let _ = write!(out, "{:<12} {:>5} {:>3} {:>3}", ds.dataset, ds.n, ds.d, ds.k);
            for &m in &methods {
                let cell = self
                    .row(&ds.dataset, m)
                    .map(|r| format!("{} ({})", fmt_rate(r.mean_error), fmt_rate(r.sd_error)))
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, "  {cell:>14}");
            }
            out.push('\n');
        }
        out
    }

    /// Sampler efficiency: minimum ESS, time, time per ESS and relative
    /// speed for each dataset and sampling method.
    pub fn table3_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<10} {:>10} {:>10} {:>10} {:>13}",
            "Dataset", "Method", "ESS", "Time (s)", "Time/ESS", "Relat. Speed"
        );
        for row in self.rows.iter().filter(|r| r.method.is_sampler()) {
            let _ = writeln!(
                out,
                "{:<12} {:<10} {:>10} {:>10} {:>10} {:>13}",
                row.dataset,
                row.method.heading(),
                fmt_opt(row.min_ess, 1),
                fmt_opt(Some(row.time), 3),
                fmt_opt(row.time_per_ess, 4),
                fmt_opt(row.relative_speed, 1)
            );
        }
        out
    }

    /// `dataset,n,d,k,method,mean_error,sd_error,completed,failed`
    pub fn write_table2_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dataset", "n", "d", "k", "method", "mean_error", "sd_error", "completed", "failed"])?;
        for r in &self.rows {
            w.write_record([
                r.dataset.clone(),
                r.n.to_string(),
                r.d.to_string(),
                r.k.to_string(),
                r.method.tag().into(),
                format_float(r.mean_error),
                format_float(r.sd_error),
                r.completed.to_string(),
                r.failed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// `dataset,method,min_ess,time,time_per_ess,relative_speed` for the
    /// sampling methods; missing values are empty.
    pub fn write_table3_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dataset", "method", "min_ess", "time", "time_per_ess", "relative_speed"])?;
        for r in self.rows.iter().filter(|r| r.method.is_sampler()) {
            w.write_record([
                r.dataset.clone(),
                r.method.tag().into(),
                opt(r.min_ess),
                r.time.to_string(),
                opt(r.time_per_ess),
                opt(r.relative_speed),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
