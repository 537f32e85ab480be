//! Mean-field variational EM, `q(C) q(Z) q(lambda)`.
//!
//! The factors are Discrete, Exponential and Gamma:
//!
//! ```text
//! rho_ij   ∝ W_ij exp(<ln lambda_{Y_i j}>)       (only class Y_i carries mass)
//! <z_i>    = 1 / (W_i . sum_l <lambda_l>)
//! a_kj     = a + <n_kj>,   b_kj = b + sum_i <z_i> W_ij
//! ```
//!
//! with `<lambda> = a_kj / b_kj` and `<ln lambda> = psi(a_kj) - ln b_kj`.
//! Each factor update is exact coordinate ascent, so the bound returned by
//! [`elbo`] never decreases across [`vb_update`] calls.
//!
//! The bound is assembled as
//!
//! ```text
//! E[ln p(Y, C, Z | lambda)] + E[ln p(lambda)] + H[q(C)] + H[q(Z)] + H[q(lambda)]
//! ```
//!
//! where `q(Z_i)` is Exponential with rate `1 / <z_i>`.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, Design, ModelError};
use crate::stochastic::{self, ln_gamma, special::digamma_unchecked, RngStream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VbError {
    #[error("non-finite value in {location}")]
    Numeric { location: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for VbConfig {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            rel_tol: 1e-8,
        }
    }
}

impl VbConfig {
    fn validate(&self) -> Result<(), VbError> {
        if self.max_iters == 0 {
            return Err(VbError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(VbError::InvalidConfig(format!("rel_tol = {}", self.rel_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    /// `n x p`; row `i` is `q(C_i)`, supported on class `Y_i` only.
    pub rho: Array2<f64>,
    /// Gamma shapes `a_kj` of `q(lambda)`.
    pub shape: Array2<f64>,
    /// Gamma rates `b_kj` of `q(lambda)`.
    pub rate: Array2<f64>,
    /// `<z_i>`
    pub z_mean: Vec<f64>,
    /// Bound after each update.
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// How to turn `q(lambda)` into class probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PredictionMode {
    /// Class probabilities at `<lambda>`.
    #[default]
    PlugIn,
    /// Average over `draws` samples of `q(lambda)`.
    MonteCarlo { draws: usize, seed: u64 },
}

impl VariationalState {
    /// Prior Gamma factors, uniform `q(C)` over each observation's features.
    pub fn initial(design: &Design, hyper_a: f64, hyper_b: f64) -> Result<Self, VbError> {
        check_hyper(hyper_a, hyper_b)?;
        let dim = (design.n_classes(), design.p());
        let shape = Array2::from_elem(dim, hyper_a);
        let rate = Array2::from_elem(dim, hyper_b);
        let rho = Array2::from_elem((design.n(), design.p()), 1.0 / design.p() as f64);
        let mut state = Self {
            rho,
            shape,
            rate,
            z_mean: vec![0.0; design.n()],
            elbo_trace: Vec::new(),
            iterations: 0,
            converged: false,
        };
        state.z_mean = state.expected_arrivals(design);
        Ok(state)
    }

    pub fn mean_lambda(&self) -> Array2<f64> {
        &self.shape / &self.rate
    }

    pub fn mean_log_lambda(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.shape.dim(), |ix| digamma_unchecked(self.shape[ix]) - self.rate[ix].ln())
    }

    /// `<n_kj> = sum_i [Y_i = k] rho_ij`
    pub fn expected_counts(&self, design: &Design) -> Array2<f64> {
        let mut counts = Array2::zeros(self.shape.dim());
        for (row, &k) in self.rho.rows().into_iter().zip(design.labels()) {
            let mut target = counts.row_mut(k);
            target += &row;
        }
        counts
    }

    fn expected_arrivals(&self, design: &Design) -> Vec<f64> {
        let column_mass = self.mean_lambda().sum_axis(Axis(0));
        (0..design.n())
            .map(|i| 1.0 / model::dot(design.row(i), column_mass.view()))
            .collect()
    }

    pub fn predict(&self, w: &[f64], mode: PredictionMode) -> Result<Vec<f64>, VbError> {
        match mode {
            PredictionMode::PlugIn => Ok(model::class_probabilities(w, self.mean_lambda().view())?),
            PredictionMode::MonteCarlo { draws, seed } => {
                if draws == 0 {
                    return Err(VbError::InvalidConfig("zero Monte-Carlo draws".into()));
                }
                let mut rng = RngStream::new(seed);
                let mut acc = vec![0.0; self.shape.nrows()];
                for _ in 0..draws {
                    let lambda = Array2::from_shape_fn(self.shape.dim(), |ix| {
                        stochastic::gamma_unit(self.shape[ix], &mut rng) / self.rate[ix]
                    });
                    let p = model::class_probabilities(w, lambda.view())?;
                    acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
                }
                Ok(acc.into_iter().map(|v| v / draws as f64).collect())
            }
        }
    }
}

/// One sweep: `q(C)` and `q(Z)` from the current Gamma factors, then the
/// Gamma factors from the new `q(C)`, `q(Z)`.
pub fn vb_update(state: &mut VariationalState, design: &Design, hyper_a: f64, hyper_b: f64) -> Result<(), VbError> {
    check_hyper(hyper_a, hyper_b)?;
    check_state(state, design)?;
    let log_lambda = state.mean_log_lambda();
    for (i, (mut row, &y)) in state.rho.rows_mut().into_iter().zip(design.labels()).enumerate() {
        let w = design.row(i);
        let mut max = f64::NEG_INFINITY;
        for ((slot, &wij), &ll) in row.iter_mut().zip(w).zip(log_lambda.row(y).iter()) {
            *slot = wij.ln() + ll;
            max = max.max(*slot);
        }
        if !max.is_finite() {
            return Err(VbError::Numeric {
                location: format!("responsibilities of observation {i}"),
            });
        }
        let mut total = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            total += e;
            e
        });
        row.mapv_inplace(|v| v / total);
    }
    state.z_mean = state.expected_arrivals(design);
    if let Some(i) = state.z_mean.iter().position(|z| !(z.is_finite() && *z > 0.0)) {
        return Err(VbError::Numeric {
            location: format!("expected arrival of observation {i}"),
        });
    }

    let counts = state.expected_counts(design);
    let mut exposure = vec![hyper_b; design.p()];
    for (i, &z) in state.z_mean.iter().enumerate() {
        for (e, &wij) in exposure.iter_mut().zip(design.row(i)) {
            *e += z * wij;
        }
    }
    state.shape = counts.mapv(|n| hyper_a + n);
    state.rate = Array2::from_shape_fn(state.shape.dim(), |(_, j)| exposure[j]);
    Ok(())
}

/// The variational lower bound on `ln p(Y)` at the current state.
pub fn elbo(state: &VariationalState, design: &Design, hyper_a: f64, hyper_b: f64) -> Result<f64, VbError> {
    check_hyper(hyper_a, hyper_b)?;
    check_state(state, design)?;
    let mean = state.mean_lambda();
    let log_mean = state.mean_log_lambda();
    let column_mass = mean.sum_axis(Axis(0));

    let mut expected_complete = 0.0;
    let mut entropy_c = 0.0;
    let mut entropy_z = 0.0;
    for (i, &y) in design.labels().iter().enumerate() {
        let w = design.row(i);
        for (j, &r) in state.rho.row(i).iter().enumerate() {
            if r > 0.0 {
                expected_complete += r * (log_mean[[y, j]] + w[j].ln());
                entropy_c -= r * r.ln();
            }
        }
        let z = state.z_mean[i];
        expected_complete -= z * model::dot(w, column_mass.view());
        entropy_z += 1.0 + z.ln();
    }

    let prior_const = hyper_a * hyper_b.ln() - ln_gamma(hyper_a);
    let mut expected_prior = 0.0;
    let mut entropy_lambda = 0.0;
    for ((ix, &alpha), &beta) in state.shape.indexed_iter().zip(state.rate.iter()) {
        expected_prior += prior_const + (hyper_a - 1.0) * log_mean[ix] - hyper_b * mean[ix];
        entropy_lambda += alpha - beta.ln() + ln_gamma(alpha) + (1.0 - alpha) * digamma_unchecked(alpha);
    }

    let bound = expected_complete + expected_prior + entropy_c + entropy_z + entropy_lambda;
    if !bound.is_finite() {
        return Err(VbError::Numeric {
            location: "evidence lower bound".into(),
        });
    }
    Ok(bound)
}

pub fn fit_vb(design: &Design, hyper_a: f64, hyper_b: f64, config: &VbConfig) -> Result<VariationalState, VbError> {
    let state = VariationalState::initial(design, hyper_a, hyper_b)?;
    fit_vb_from(design, state, hyper_a, hyper_b, config)
}

/// Iterates [`vb_update`] from `state` until the relative change of the
/// bound drops below `rel_tol`. The trace is reset.
pub fn fit_vb_from(
    design: &Design,
    mut state: VariationalState,
    hyper_a: f64,
    hyper_b: f64,
    config: &VbConfig,
) -> Result<VariationalState, VbError> {
    config.validate()?;
    state.elbo_trace.clear();
    state.converged = false;
    state.iterations = 0;
    while state.iterations < config.max_iters {
        vb_update(&mut state, design, hyper_a, hyper_b)?;
        state.iterations += 1;
        let value = elbo(&state, design, hyper_a, hyper_b)?;
        let previous = state.elbo_trace.last().copied();
        state.elbo_trace.push(value);
        if let Some(prev) = previous {
            if (value - prev).abs() <= config.rel_tol * prev.abs().max(f64::MIN_POSITIVE) {
                state.converged = true;
                break;
            }
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypeTwoConfig {
    pub a_lo: f64,
    pub a_hi: f64,
    /// Golden-section tolerance on `ln a`.
    pub tol: f64,
    pub grid_points: usize,
    pub vb: VbConfig,
}

impl Default for TypeTwoConfig {
    fn default() -> Self {
        Self {
            a_lo: 1e-3,
            a_hi: 1e3,
            tol: 1e-3,
            grid_points: 25,
            vb: VbConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeTwoResult {
    pub a_hat: f64,
    /// Converged bound plus `ln p(a) = -ln a` at `a_hat`.
    pub objective: f64,
    pub state: VariationalState,
    /// Every `(a, objective)` evaluated, in order.
    pub evaluations: Vec<(f64, f64)>,
    /// Set when golden-section search lost to an endpoint and the grid scan ran.
    pub used_grid_fallback: bool,
}

/// Type-II maximum likelihood for the shape `a`: maximizes the converged
/// bound plus `-ln a` by golden-section search on `ln a`, each fit warm
/// started from the previous one. When the interior optimum does not beat
/// both endpoints the objective is treated as non-unimodal and a
/// log-spaced grid scan is used instead.
pub fn type2_ml_a(design: &Design, hyper_b: f64, config: &TypeTwoConfig) -> Result<TypeTwoResult, VbError> {
    let TypeTwoConfig { a_lo, a_hi, tol, .. } = *config;
    if !(a_lo > 0.0 && a_lo <= a_hi && a_hi.is_finite()) {
        return Err(VbError::InvalidConfig(format!("search interval [{a_lo}, {a_hi}]")));
    }
    if !(tol > 0.0) {
        return Err(VbError::InvalidConfig(format!("tolerance {tol}")));
    }

    let mut evaluations: Vec<(f64, f64)> = Vec::new();
    let mut best: Option<(f64, f64, VariationalState)> = None;
    let mut warm: Option<VariationalState> = None;
    let mut evaluate = |log_a: f64,
                        evaluations: &mut Vec<(f64, f64)>,
                        best: &mut Option<(f64, f64, VariationalState)>|
     -> Result<f64, VbError> {
        let a = log_a.exp();
        let start = match warm.take() {
            Some(s) => s,
            None => VariationalState::initial(design, a, hyper_b)?,
        };
        let state = fit_vb_from(design, start, a, hyper_b, &config.vb)?;
        let value = *state.elbo_trace.last().expect("at least one iteration") - a.ln();
        evaluations.push((a, value));
        if best.as_ref().is_none_or(|(_, v, _)| value > *v) {
            *best = Some((a, value, state.clone()));
        }
        warm = Some(state);
        Ok(value)
    };

    let (lo, hi) = (a_lo.ln(), a_hi.ln());
    if a_lo == a_hi {
        evaluate(lo, &mut evaluations, &mut best)?;
    } else {
        let f_lo = evaluate(lo, &mut evaluations, &mut best)?;
        let f_hi = evaluate(hi, &mut evaluations, &mut best)?;
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let (mut left, mut right) = (lo, hi);
        let mut x1 = right - ratio * (right - left);
        let mut x2 = left + ratio * (right - left);
        let mut f1 = evaluate(x1, &mut evaluations, &mut best)?;
        let mut f2 = evaluate(x2, &mut evaluations, &mut best)?;
        while right - left > tol {
            if f1 >= f2 {
                right = x2;
                x2 = x1;
                f2 = f1;
                x1 = right - ratio * (right - left);
                f1 = evaluate(x1, &mut evaluations, &mut best)?;
            } else {
                left = x1;
                x1 = x2;
                f1 = f2;
                x2 = left + ratio * (right - left);
                f2 = evaluate(x2, &mut evaluations, &mut best)?;
            }
        }
        let interior = f1.max(f2);
        let bracket_failed = interior < f_lo || interior < f_hi;
        if bracket_failed {
            log::warn!(
                "type-II search for a: interior optimum {interior} below an endpoint ({f_lo}, {f_hi}); falling back to a grid scan"
            );
            let points = config.grid_points.max(2);
            for g in 0..points {
                let x = lo + (hi - lo) * g as f64 / (points - 1) as f64;
                evaluate(x, &mut evaluations, &mut best)?;
            }
        }
        let (a_hat, objective, state) = best.expect("evaluated");
        return Ok(TypeTwoResult {
            a_hat,
            objective,
            state,
            evaluations,
            used_grid_fallback: bracket_failed,
        });
    }
    let (a_hat, objective, state) = best.expect("evaluated");
    Ok(TypeTwoResult {
        a_hat,
        objective,
        state,
        evaluations,
        used_grid_fallback: false,
    })
}

fn check_hyper(hyper_a: f64, hyper_b: f64) -> Result<(), VbError> {
    if !(hyper_a > 0.0 && hyper_a.is_finite()) || !(hyper_b > 0.0 && hyper_b.is_finite()) {
        return Err(VbError::InvalidConfig(format!(
            "hyperparameters a = {hyper_a}, b = {hyper_b} must be positive"
        )));
    }
    Ok(())
}

fn check_state(state: &VariationalState, design: &Design) -> Result<(), VbError> {
    let dim = (design.n_classes(), design.p());
    if state.shape.dim() != dim
        || state.rate.dim() != dim
        || state.rho.dim() != (design.n(), design.p())
        || state.z_mean.len() != design.n()
    {
        return Err(ModelError::ShapeMismatch("variational state does not match the design".into()).into());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn symmetric_responsibilities() {
        let design = Design::new(array![[2.0, 2.0]], vec![0], 1).unwrap();
        let mut state = VariationalState::initial(&design, 1.0, 1.0).unwrap();
        vb_update(&mut state, &design, 1.0, 1.0).unwrap();
        assert_eq!(state.rho.row(0).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn counts_sum_to_n() {
        let design = Design::new(
            array![[1.0, 2.0, 0.5], [0.3, 1.0, 1.0], [2.0, 0.1, 1.0], [1.0, 1.0, 1.0]],
            vec![0, 1, 2, 1],
            3,
        )
        .unwrap();
        let mut state = VariationalState::initial(&design, 0.7, 1.0).unwrap();
        for _ in 0..5 {
            vb_update(&mut state, &design, 0.7, 1.0).unwrap();
            let total: f64 = state.expected_counts(&design).sum();
            assert!((total - 4.0).abs() < 1e-12);
            for row in state.rho.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_feature_fixed_point() {
        // p = 1: rho = 1, a_k = a + n_k and b_k = b (K a + n) / (K a)
        let design = Design::new(array![[1.0], [2.0], [0.5], [3.0], [1.5]], vec![0, 1, 1, 2, 1], 3).unwrap();
        let (a, b) = (0.8, 2.0);
        let state = fit_vb(&design, a, b, &VbConfig { max_iters: 10_000, rel_tol: 1e-15 }).unwrap();
        let expected_rate = b * (3.0 * a + 5.0) / (3.0 * a);
        for (k, n_k) in [1.0, 3.0, 1.0].iter().enumerate() {
            assert!((state.shape[[k, 0]] - (a + n_k)).abs() < 1e-12);
            assert!((state.rate[[k, 0]] - expected_rate).abs() < 1e-9 * expected_rate);
        }
    }

    #[test]
    fn deterministic() {
        let design = Design::new(array![[1.0, 2.0], [0.5, 1.0], [2.0, 0.3]], vec![0, 1, 1], 2).unwrap();
        let a = fit_vb(&design, 1.0, 1.0, &VbConfig::default()).unwrap();
        let b = fit_vb(&design, 1.0, 1.0, &VbConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_prediction_is_close_to_plug_in() {
        let design = Design::new(array![[1.0, 2.0], [0.5, 1.0], [2.0, 0.3], [1.0, 1.0]], vec![0, 1, 1, 0], 2).unwrap();
        let state = fit_vb(&design, 2.0, 1.0, &VbConfig::default()).unwrap();
        let plug = state.predict(&[1.0, 1.0], PredictionMode::PlugIn).unwrap();
        let mc = state
            .predict(&[1.0, 1.0], PredictionMode::MonteCarlo { draws: 20_000, seed: 3 })
            .unwrap();
        assert!((mc.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        assert!((plug[0] - mc[0]).abs() < 0.1);
    }

    #[test]
    fn rejects_zero_rate() {
        let design = Design::new(array![[1.0]], vec![0], 1).unwrap();
        assert!(fit_vb(&design, 1.0, 0.0, &VbConfig::default()).is_err());
    }
}
