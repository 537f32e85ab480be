//! Effective sample size, classification metrics, regularization paths and
//! the replicated train/test benchmark.

mod bench;
mod path;

pub use bench::{
    benchmark, stratified_split, BenchmarkConfig, BenchmarkDataset, BenchmarkReport, CellResult, Method,
    SummaryRow,
};
pub use path::{check_grid, regularization_path, PathConfig, PathEstimator, PathPoint, RegPath};

use ndarray::{ArrayView1, ArrayView2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::Chain;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("series of length {0} is too short; at least 10 draws are needed")]
    InsufficientData(usize),
    #[error("series contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Autocovariances `gamma(0..n)` with denominator `n`, via zero-padded FFT.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let scale = 1.0 / (size as f64 * n as f64);
    buf[..n].iter().map(|c| c.re * scale).collect()
}

/// Effective sample size by Geyer's initial monotone sequence estimator,
/// clamped to `[1, N]`. A constant series has ESS 1.
pub fn ess(draws: &[f64]) -> Result<f64, DiagnosticsError> {
    let n = draws.len();
    if n < 10 {
        return Err(DiagnosticsError::InsufficientData(n));
    }
    if let Some(i) = draws.iter().position(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite(i));
    }
    let gamma = autocovariance(draws);
    let var = gamma[0];
    if !(var > f64::EPSILON * draws.iter().map(|v| v * v).sum::<f64>() / n as f64) {
        return Ok(1.0);
    }
    let mut sum = 0.0;
    let mut running_min = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = gamma[2 * m] + gamma[2 * m + 1];
        if pair <= 0.0 {
            break;
        }
        running_min = running_min.min(pair);
        sum += running_min;
        m += 1;
    }
    let tau = -1.0 + 2.0 * sum / var;
    Ok((n as f64 / tau).clamp(1.0, n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub per_coordinate: Vec<f64>,
    pub min_ess: f64,
    /// Flattened coordinate attaining `min_ess`.
    pub argmin: usize,
    pub wall_time: f64,
    pub time_per_ess: f64,
    /// Reference time-per-ESS over this report's time-per-ESS.
    pub relative_speed: Option<f64>,
}

impl EssReport {
    pub fn from_draws(draws: ArrayView2<f64>, wall_time: f64) -> Result<Self, DiagnosticsError> {
        if draws.ncols() == 0 {
            return Err(DiagnosticsError::ShapeMismatch("no coordinates".into()));
        }
        let per_coordinate = draws
            .axis_iter(Axis(1))
            .map(|c| ess(&c.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let (argmin, &min_ess) = per_coordinate
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        Ok(Self {
            per_coordinate,
            min_ess,
            argmin,
            wall_time,
            time_per_ess: wall_time / min_ess,
            relative_speed: None,
        })
    }

    pub fn with_reference(mut self, reference: &EssReport) -> Self {
        self.relative_speed = Some(reference.time_per_ess / self.time_per_ess);
        self
    }
}

/// Minimum ESS over every stored coordinate. Plackett-Luce chains
/// (`lambda`) are reduced to the normalized weights first, since the total
/// mass is not identified by the data.
pub fn min_ess_report(chain: &Chain, wall_time: f64) -> Result<EssReport, DiagnosticsError> {
    if chain.is_empty() {
        return Err(DiagnosticsError::InsufficientData(0));
    }
    if chain.coefficient_name == "lambda" {
        EssReport::from_draws(chain.normalized_draws().view(), wall_time)
    } else {
        EssReport::from_draws(chain.draws.view(), wall_time)
    }
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of rows whose argmax (ties to the lowest class) differs from
/// the label.
pub fn misclassification(predictions: ArrayView2<f64>, labels: &[usize]) -> Result<f64, DiagnosticsError> {
    if predictions.nrows() != labels.len() || predictions.nrows() == 0 {
        return Err(DiagnosticsError::ShapeMismatch(format!(
            "{} prediction rows for {} labels",
            predictions.nrows(),
            labels.len()
        )));
    }
    for (i, row) in predictions.rows().into_iter().enumerate() {
        let s = row.sum();
        if !((s - 1.0).abs() <= 1e-6) {
            return Err(DiagnosticsError::Invalid(format!("row {i} sums to {s}")));
        }
    }
    let wrong = predictions
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(*row) != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    /// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC curve by a sweep over distinct score thresholds, highest first, and
/// its trapezoid area. Tied scores form one step, so the area equals the
/// Mann-Whitney statistic.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Result<Roc, DiagnosticsError> {
    if scores.len() != positive.len() {
        return Err(DiagnosticsError::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(DiagnosticsError::NonFinite(i));
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as u64;
    let n_neg = positive.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(DiagnosticsError::Undefined("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut points = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += u128::from(fp - fp0) * u128::from(tp + tp0);
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    let auc = twice_area as f64 / (2.0 * n_pos as f64 * n_neg as f64);
    Ok(Roc { points, auc })
}
