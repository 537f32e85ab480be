use std::io::Write;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::DiagnosticsError;
use crate::em::{self, EmConfig};
use crate::gibbs::{self, GibbsConfig};
use crate::io::format_float;
use crate::model::{self, Design};
use crate::stochastic::RngStream;
use crate::variational::{self, VariationalState, VbConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PathEstimator {
    #[default]
    Map,
    GibbsMean,
    GibbsMedian,
    VbMean,
}

impl PathEstimator {
    pub fn tag(self) -> &'static str {
        match self {
            PathEstimator::Map => "map",
            PathEstimator::GibbsMean => "gibbs-mean",
            PathEstimator::GibbsMedian => "gibbs-median",
            PathEstimator::VbMean => "vb-mean",
        }
    }
}

impl FromStr for PathEstimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            PathEstimator::Map,
            PathEstimator::GibbsMean,
            PathEstimator::GibbsMedian,
            PathEstimator::VbMean,
        ]
        .into_iter()
        .find(|e| e.tag() == s)
        .ok_or_else(|| format!("unknown estimator `{s}` (map, gibbs-mean, gibbs-median, vb-mean)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathConfig {
    pub hyper_b: f64,
    pub em: EmConfig,
    pub gibbs: GibbsConfig,
    pub vb: VbConfig,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            hyper_b: 1.0,
            em: EmConfig::default(),
            gibbs: GibbsConfig::default(),
            vb: VbConfig::default(),
        }
    }
}

/// One grid point. `coefficients` holds normalized weights; `error` is set
/// instead when the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub a: f64,
    pub coefficients: Option<Array2<f64>>,
    /// Exact zeros of the MAP weights.
    pub zero_pattern: Option<Vec<(usize, usize)>>,
    /// Final log posterior (map) or bound (vb-mean).
    pub objective: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegPath {
    pub estimator: PathEstimator,
    pub grid: Vec<f64>,
    pub points: Vec<PathPoint>,
}

impl RegPath {
    /// Exact zeros per grid point, `None` where the fit failed.
    pub fn zero_counts(&self) -> Vec<Option<usize>> {
        self.points
            .iter()
            .map(|p| p.coefficients.as_ref().map(|c| c.iter().filter(|&&v| v == 0.0).count()))
            .collect()
    }

    /// Long format: `a,k,j,value,estimator`, one-based `k` and `j`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["a", "k", "j", "value", "estimator"])?;
        for point in &self.points {
            if let Some(c) = &point.coefficients {
                for ((k, j), v) in c.indexed_iter() {
                    writer.write_record([
                        format_float(point.a),
                        (k + 1).to_string(),
                        (j + 1).to_string(),
                        format_float(*v),
                        self.estimator.tag().to_string(),
                    ])?;
                }
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Grid must be non-empty, positive, finite and strictly decreasing.
pub fn check_grid(grid: &[f64]) -> Result<(), DiagnosticsError> {
    if grid.is_empty() {
        return Err(DiagnosticsError::Invalid("empty grid".into()));
    }
    if let Some(a) = grid.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(DiagnosticsError::Invalid(format!("grid value {a} is not positive")));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(DiagnosticsError::Invalid("grid must be strictly decreasing".into()));
    }
    Ok(())
}

/// Fits `estimator` at every `a` of the grid. MAP and variational fits are
/// warm started from the previous grid point (MAP at unit total mass); Gibbs chains use stream `g`
/// forked from `rng` for grid index `g`. A failed point is recorded and the
/// path continues.
pub fn regularization_path(
    design: &Design,
    grid: &[f64],
    estimator: PathEstimator,
    config: &PathConfig,
    rng: &mut RngStream,
) -> Result<RegPath, DiagnosticsError> {
    check_grid(grid)?;
    if !(config.hyper_b > 0.0) {
        return Err(DiagnosticsError::Invalid(format!("rate b = {}", config.hyper_b)));
    }
    let b = config.hyper_b;
    let mut points = Vec::with_capacity(grid.len());
    let mut warm_map: Option<Array2<f64>> = None;
    let mut warm_vb: Option<VariationalState> = None;
    for (g, &a) in grid.iter().enumerate() {
        let mut point = PathPoint {
            a,
            coefficients: None,
            zero_pattern: None,
            objective: None,
            error: None,
        };
        match estimator {
            PathEstimator::Map => {
                let fit = match warm_map.take() {
                    Some(init) => em::fit_map_from(design, init, a, b, &config.em),
                    None => em::fit_map(design, a, b, &config.em, &mut rng.fork(g as u64)),
                };
                match fit {
                    Ok(trace) => {
                        point.coefficients = Some(trace.weights.normalized());
                        point.zero_pattern = Some(trace.sparsity.clone());
                        point.objective = trace.objective.last().copied();
                        // restart at unit mass; the likelihood ignores scale
                        warm_map = Some(trace.weights.normalized());
                    }
                    Err(e) => point.error = Some(e.to_string()),
                }
            }
            PathEstimator::GibbsMean | PathEstimator::GibbsMedian => {
                match gibbs::run_chain(design, a, b, &config.gibbs, &mut rng.fork(g as u64))
                    .and_then(|chain| gibbs::posterior_summaries(&chain))
                {
                    Ok(summary) => {
                        point.coefficients = Some(if estimator == PathEstimator::GibbsMean {
                            summary.mean
                        } else {
                            summary.median
                        });
                    }
                    Err(e) => point.error = Some(e.to_string()),
                }
            }
            PathEstimator::VbMean => {
                let fit = match warm_vb.take() {
                    Some(state) => variational::fit_vb_from(design, state, a, b, &config.vb),
                    None => variational::fit_vb(design, a, b, &config.vb),
                };
                match fit {
                    Ok(state) => {
                        point.coefficients = Some(model::normalize(state.mean_lambda().view()));
                        point.objective = state.elbo_trace.last().copied();
                        warm_vb = Some(state);
                    }
                    Err(e) => point.error = Some(e.to_string()),
                }
            }
        }
        if let Some(e) = &point.error {
            log::warn!("path point a = {a} failed: {e}");
        }
        points.push(point);
    }
    Ok(RegPath {
        estimator,
        grid: grid.to_vec(),
        points,
    })
}
