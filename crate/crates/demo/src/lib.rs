//! Browser demo: decision regions, regularization paths and the
//! exponential-race check on the bundled iris data.
//!
//! Every export returns a JSON string; the Rust-side functions with the
//! same names minus the `_js` suffix are what the native tests call.

use ndarray::{Array2, Axis};
use plreg::diagnostics::{regularization_path as path, PathConfig, PathEstimator};
use plreg::em::{self, EmConfig};
use plreg::io::{self, CsvOptions, LoadedData, Standardization};
use plreg::model::{self, Dataset, FeatureMap, Transform};
use plreg::RngStream;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const IRIS: &str = include_str!("../../../data/iris.csv");
const PETAL: [usize; 2] = [2, 3];

fn iris() -> Result<LoadedData, String> {
    let table = io::read_table_from(IRIS.as_bytes(), Some("class")).map_err(|e| e.to_string())?;
    io::labeled_data(table, None, &CsvOptions { standardize: false }).map_err(|e| e.to_string())
}

fn feature_name(t: &Transform, names: &[String]) -> String {
    match t {
        Transform::PositiveExp { covariate } => format!("exp(+{})", names[*covariate]),
        Transform::NegativeExp { covariate } => format!("exp(-{})", names[*covariate]),
        Transform::Offset => "1".into(),
        Transform::Interaction { first, second, negate } => {
            format!("exp({}({} + {}))", if *negate { "-" } else { "+" }, names[*first], names[*second])
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DecisionField {
    pub resolution: usize,
    pub x_name: String,
    pub y_name: String,
    /// `[min, max]` of the plotted petal length.
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub label_names: Vec<String>,
    /// Row `r` of the grid is `y = y_max - r * dy`; cell `(r, c)` holds
    /// `K` probabilities starting at `(r * resolution + c) * K`.
    pub probabilities: Vec<f64>,
    /// `[x, y, class]` per training row.
    pub points: Vec<[f64; 3]>,
    pub feature_names: Vec<String>,
    /// Normalized MAP weights, `K x p` row-major.
    pub weights: Vec<f64>,
    pub zeros: usize,
    pub iterations: usize,
    pub training_error: f64,
}

/// MAP fit on the two petal measurements, evaluated over a grid.
pub fn decision_field(a: f64, b: f64, interaction: bool, resolution: usize) -> Result<DecisionField, String> {
    if !(2..=400).contains(&resolution) {
        return Err(format!("resolution {resolution} outside 2..=400"));
    }
    let data = iris()?;
    let raw = data.dataset.x().select(Axis(1), &PETAL);
    let scaling = Standardization::fit(raw.view());
    let x = scaling.apply(raw.view()).map_err(|e| e.to_string())?;
    let dataset = Dataset::new(x, data.dataset.labels().to_vec(), data.dataset.n_classes()).map_err(|e| e.to_string())?;
    let mut map = FeatureMap::default_for(2);
    if interaction {
        map = map.with_interaction(0, 1);
    }
    let design = map.design(&dataset).map_err(|e| e.to_string())?;
    let config = EmConfig {
        max_iters: 2000,
        ..EmConfig::default()
    };
    let trace = em::fit_map(&design, a, b, &config, &mut RngStream::new(0)).map_err(|e| e.to_string())?;
    let weights = trace.weights.normalized();

    let k = data.dataset.n_classes();
    let x_range = [0.5, 7.5];
    let y_range = [-0.2, 2.9];
    let step = |range: [f64; 2], i: usize| range[0] + (range[1] - range[0]) * i as f64 / (resolution - 1) as f64;
    let mut grid = Array2::zeros((resolution * resolution, 2));
    for r in 0..resolution {
        for c in 0..resolution {
            let row = r * resolution + c;
            grid[[row, 0]] = step(x_range, c);
            grid[[row, 1]] = step([y_range[1], y_range[0]], r);
        }
    }
    let w = map
        .transform_matrix(scaling.apply(grid.view()).map_err(|e| e.to_string())?.view())
        .map_err(|e| e.to_string())?;
    let mut probabilities = Vec::with_capacity(resolution * resolution * k);
    for row in w.rows() {
        let p = model::class_probabilities(row.as_slice().expect("row-major"), weights.view()).map_err(|e| e.to_string())?;
        probabilities.extend(p);
    }

    let train_w = design.w();
    let mut wrong = 0;
    for (i, &y) in design.labels().iter().enumerate() {
        let p = model::class_probabilities(train_w.row(i).as_slice().expect("row-major"), weights.view()).map_err(|e| e.to_string())?;
        if plreg::diagnostics::argmax(ndarray::aview1(&p)) != y {
            wrong += 1;
        }
    }
    let names: Vec<String> = PETAL.iter().map(|&j| data.covariate_names[j].clone()).collect();
    Ok(DecisionField {
        resolution,
        x_name: names[0].clone(),
        y_name: names[1].clone(),
        x_range,
        y_range,
        label_names: data.label_names.clone(),
        probabilities,
        points: raw
            .rows()
            .into_iter()
            .zip(data.dataset.labels())
            .map(|(r, &y)| [r[0], r[1], y as f64])
            .collect(),
        feature_names: map.transforms().iter().map(|t| feature_name(t, &names)).collect(),
        weights: weights.iter().copied().collect(),
        zeros: trace.sparsity.len(),
        iterations: trace.iterations,
        training_error: wrong as f64 / design.n() as f64,
    })
}

#[derive(Debug, Serialize)]
pub struct PathView {
    pub grid: Vec<f64>,
    pub label_names: Vec<String>,
    pub feature_names: Vec<String>,
    /// Per grid point, normalized weights `K x p` row-major, or `None`
    /// where the fit failed.
    pub coefficients: Vec<Option<Vec<f64>>>,
    pub zero_counts: Vec<Option<usize>>,
    pub errors: Vec<Option<String>>,
}

/// Warm-started MAP path over `steps` shapes from `a_max` down to `a_min`
/// on all four iris covariates.
pub fn regularization_path(a_max: f64, a_min: f64, steps: usize) -> Result<PathView, String> {
    if !(steps >= 2 && steps <= 60) {
        return Err(format!("steps {steps} outside 2..=60"));
    }
    if !(a_max > a_min && a_min > 0.0) {
        return Err(format!("need a_max > a_min > 0, got {a_max} and {a_min}"));
    }
    let data = iris()?;
    let scaling = Standardization::fit(data.dataset.x());
    let x = scaling.apply(data.dataset.x()).map_err(|e| e.to_string())?;
    let dataset = Dataset::new(x, data.dataset.labels().to_vec(), data.dataset.n_classes()).map_err(|e| e.to_string())?;
    let map = FeatureMap::default_for(dataset.d());
    let design = map.design(&dataset).map_err(|e| e.to_string())?;
    let grid: Vec<f64> = (0..steps)
        .map(|i| a_max + (a_min - a_max) * i as f64 / (steps - 1) as f64)
        .collect();
    let config = PathConfig {
        em: EmConfig {
            max_iters: 2000,
            ..EmConfig::default()
        },
        ..PathConfig::default()
    };
    let result = path(&design, &grid, PathEstimator::Map, &config, &mut RngStream::new(0)).map_err(|e| e.to_string())?;
    Ok(PathView {
        zero_counts: result.zero_counts(),
        coefficients: result
            .points
            .iter()
            .map(|p| p.coefficients.as_ref().map(|c| c.iter().copied().collect()))
            .collect(),
        errors: result.points.iter().map(|p| p.error.clone()).collect(),
        grid,
        label_names: data.label_names,
        feature_names: map.transforms().iter().map(|t| feature_name(t, &data.covariate_names)).collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct RaceCheck {
    pub exact: Vec<f64>,
    pub simulated: Vec<f64>,
    /// Binomial standard error of each simulated frequency.
    pub standard_error: Vec<f64>,
}

/// Class probabilities next to winner frequencies of simulated races.
pub fn race_check(lambda: &[f64], n_classes: usize, w: &[f64], draws: usize, seed: u64) -> Result<RaceCheck, String> {
    if n_classes == 0 || lambda.len() != n_classes * w.len() {
        return Err(format!("{} weights do not form {n_classes} rows of {} features", lambda.len(), w.len()));
    }
    if draws == 0 || draws > 5_000_000 {
        return Err(format!("draws {draws} outside 1..=5000000"));
    }
    let lambda = Array2::from_shape_vec((n_classes, w.len()), lambda.to_vec()).map_err(|e| e.to_string())?;
    let exact = model::class_probabilities(w, lambda.view()).map_err(|e| e.to_string())?;
    let simulated = model::race_oracle(w, lambda.view(), draws, &mut RngStream::new(seed)).map_err(|e| e.to_string())?;
    let standard_error = exact.iter().map(|q| (q * (1.0 - q) / draws as f64).sqrt()).collect();
    Ok(RaceCheck {
        exact,
        simulated,
        standard_error,
    })
}

fn to_json<T: Serialize>(result: Result<T, String>) -> Result<String, JsError> {
    let value = result.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = decisionField)]
pub fn decision_field_js(a: f64, b: f64, interaction: bool, resolution: usize) -> Result<String, JsError> {
    to_json(decision_field(a, b, interaction, resolution))
}

#[wasm_bindgen(js_name = regularizationPath)]
pub fn regularization_path_js(a_max: f64, a_min: f64, steps: usize) -> Result<String, JsError> {
    to_json(regularization_path(a_max, a_min, steps))
}

#[wasm_bindgen(js_name = raceCheck)]
pub fn race_check_js(lambda: &[f64], n_classes: usize, w: &[f64], draws: usize, seed: u64) -> Result<String, JsError> {
    to_json(race_check(lambda, n_classes, w, draws, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_probabilities_cover_grid() {
        let field = decision_field(1.0, 1.0, false, 20).unwrap();
        assert_eq!(field.probabilities.len(), 20 * 20 * 3);
        for cell in field.probabilities.chunks(3) {
            assert!((cell.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(field.points.len(), 150);
        assert_eq!(field.weights.len(), 3 * field.feature_names.len());
        assert!(field.training_error < 0.2);
    }

    #[test]
    fn interaction_adds_features() {
        let plain = decision_field(1.0, 1.0, false, 4).unwrap();
        let rich = decision_field(1.0, 1.0, true, 4).unwrap();
        assert_eq!(rich.feature_names.len(), plain.feature_names.len() + 2);
    }

    #[test]
    fn path_sparsity_grows() {
        let view = regularization_path(1.0, 0.1, 10).unwrap();
        let counts: Vec<usize> = view.zero_counts.iter().map(|c| c.unwrap()).collect();
        assert!(counts.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(view.feature_names.len(), 9);
    }

    #[test]
    fn race_agrees_with_probabilities() {
        let check = race_check(&[1.0, 2.0, 0.5, 0.5, 3.0, 1.0], 2, &[1.0, 0.5, 2.0], 200_000, 1).unwrap();
        for ((e, s), se) in check.exact.iter().zip(&check.simulated).zip(&check.standard_error) {
            assert!((e - s).abs() < 5.0 * se);
        }
    }

    #[test]
    fn bad_inputs_are_messages() {
        assert!(race_check(&[1.0], 2, &[1.0], 10, 0).is_err());
        assert!(regularization_path(0.1, 1.0, 5).is_err());
        assert!(decision_field(1.0, 1.0, false, 1).is_err());
    }
}
