//! MAP estimation of the weights by expectation-maximisation.
//!
//! The E-step computes the posterior over each observation's latent
//! feature indicator given its label, plus the mean first-arrival time.
//! The M-step has the closed form
//!
//! ```text
//! lambda_kj = (a - 1 + <n_kj>) / (b + sum_i <z_i> W_ij)   if a - 1 + <n_kj> > 0
//!           = 0                                            otherwise
//! ```
//!
//! so shapes `a < 1` prune weights to exact zeros. A pruned weight has no
//! responsibility mass in the next E-step and therefore stays at zero.
//!
//! The reported objective is `ln p(Y | lambda) + ln p(lambda)` without the
//! terms that do not depend on `lambda`. For `a < 1` the log-prior of a
//! zero weight is `+inf`, so the prior sum runs over the strictly positive
//! entries only; the objective is then comparable between iterations that
//! share a support, and a support change (a weight hitting zero) can move it
//! in either direction. Traces computed with different `(a, b)` are not
//! comparable to each other.
//!
//! With `a < 1` the objective also grows without bound as the total mass
//! shrinks, so iterations drift toward zero scale while the normalized
//! weights settle. The fit stops early once the largest weight falls below
//! [`SCALE_FLOOR`]; predictions only use normalized weights.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, Design, ModelError, PLWeights};
use crate::stochastic::{self, RngStream};

/// Largest weight below which a fit stops before floating-point underflow.
pub const SCALE_FLOOR: f64 = 1e-200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmError {
    #[error("observation {row} has zero probability under the current weights")]
    InfeasibleObservation { row: usize },
    #[error(
        "every weight of class {class} was pruned to zero at a = {a}; the class has training examples, so use a larger a"
    )]
    ClassWipedOut { class: usize, a: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// All weights 1.
    #[default]
    ConstantOne,
    /// Independent Gam(a, b) draws (rate 1 when b = 0).
    PriorDraw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop when the relative change of the objective falls below this.
    pub rel_tol: f64,
    pub init: InitScheme,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            rel_tol: 1e-8,
            init: InitScheme::ConstantOne,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<(), EmError> {
        if self.max_iters == 0 {
            return Err(EmError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(EmError::InvalidConfig(format!("rel_tol = {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// Posterior over the latent indicators plus the expected arrival times.
#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    /// `n x p`; row `i` is the distribution of `C_i` given `Y_i`.
    pub responsibilities: Array2<f64>,
    /// `<z_i> = 1 / (W_i . sum_l lambda_l)`
    pub z_mean: Vec<f64>,
}

impl EStep {
    /// `<n_kj> = sum_i [Y_i = k] r_ij`
    pub fn expected_counts(&self, design: &Design) -> Array2<f64> {
        let mut counts = Array2::zeros((design.n_classes(), design.p()));
        for (row, &k) in self.responsibilities.rows().into_iter().zip(design.labels()) {
            let mut target = counts.row_mut(k);
            target += &row;
        }
        counts
    }
}

pub fn e_step_responsibilities(design: &Design, lambda: ArrayView2<f64>) -> Result<EStep, EmError> {
    check_dims(design, lambda)?;
    let column_mass = lambda.sum_axis(Axis(0));
    let mut responsibilities = Array2::zeros((design.n(), design.p()));
    let mut z_mean = Vec::with_capacity(design.n());
    for (i, (mut out, &y)) in responsibilities
        .rows_mut()
        .into_iter()
        .zip(design.labels())
        .enumerate()
    {
        let w = design.row(i);
        let own = lambda.row(y);
        let mut total = 0.0;
        for ((slot, &wij), &l) in out.iter_mut().zip(w).zip(own.iter()) {
            *slot = wij * l;
            total += *slot;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(EmError::InfeasibleObservation { row: i });
        }
        out.mapv_inplace(|v| v / total);
        z_mean.push(1.0 / model::dot(w, column_mass.view()));
    }
    Ok(EStep {
        responsibilities,
        z_mean,
    })
}

/// Closed-form M-step including the hard-zero branch.
pub fn m_step(
    expected_counts: ArrayView2<f64>,
    z_mean: &[f64],
    design: &Design,
    hyper_a: f64,
    hyper_b: f64,
) -> Result<PLWeights, EmError> {
    check_dims(design, expected_counts)?;
    if z_mean.len() != design.n() {
        return Err(ModelError::ShapeMismatch("z_mean length".into()).into());
    }
    let mut exposure = vec![hyper_b; design.p()];
    for (i, &z) in z_mean.iter().enumerate() {
        for (e, &wij) in exposure.iter_mut().zip(design.row(i)) {
            *e += z * wij;
        }
    }
    let lambda = Array2::from_shape_fn(expected_counts.dim(), |(k, j)| {
        let numerator = hyper_a - 1.0 + expected_counts[[k, j]];
        if numerator > 0.0 {
            numerator / exposure[j]
        } else {
            0.0
        }
    });
    Ok(PLWeights::new(lambda, hyper_a, hyper_b)?)
}

/// One E-step followed by one M-step, with the class wipe-out guard.
pub fn em_step(design: &Design, lambda: ArrayView2<f64>, hyper_a: f64, hyper_b: f64) -> Result<PLWeights, EmError> {
    let e = e_step_responsibilities(design, lambda)?;
    let counts = e.expected_counts(design);
    let weights = m_step(counts.view(), &e.z_mean, design, hyper_a, hyper_b)?;
    for (class, &c) in design.class_counts().iter().enumerate() {
        if c > 0 && weights.lambda.row(class).iter().all(|&v| v == 0.0) {
            return Err(EmError::ClassWipedOut { class, a: hyper_a });
        }
    }
    Ok(weights)
}

/// Penalised log-posterior `ln p(Y | lambda) + sum_{lambda_kj > 0} [(a-1) ln lambda_kj - b lambda_kj]`.
pub fn log_posterior(design: &Design, lambda: ArrayView2<f64>, hyper_a: f64, hyper_b: f64) -> f64 {
    model::log_likelihood(design, lambda) + log_prior(lambda, hyper_a, hyper_b)
}

fn log_prior(lambda: ArrayView2<f64>, hyper_a: f64, hyper_b: f64) -> f64 {
    lambda
        .iter()
        .filter(|&&l| l > 0.0)
        .map(|&l| (hyper_a - 1.0) * l.ln() - hyper_b * l)
        .sum()
}

/// Gradient of [`log_posterior`] with respect to every weight.
///
/// Entries for zero weights are the one-sided likelihood derivative and
/// are only meaningful for `a = 1`.
pub fn log_posterior_gradient(design: &Design, lambda: ArrayView2<f64>, hyper_a: f64, hyper_b: f64) -> Array2<f64> {
    let column_mass = lambda.sum_axis(Axis(0));
    let mut grad = Array2::zeros(lambda.dim());
    for (i, &y) in design.labels().iter().enumerate() {
        let w = design.row(i);
        let own = model::dot(w, lambda.row(y));
        let all = model::dot(w, column_mass.view());
        for (j, &wij) in w.iter().enumerate() {
            grad[[y, j]] += wij / own;
            for k in 0..lambda.nrows() {
                grad[[k, j]] -= wij / all;
            }
        }
    }
    for ((k, j), g) in grad.indexed_iter_mut() {
        let l = lambda[[k, j]];
        if l > 0.0 {
            *g += (hyper_a - 1.0) / l;
        }
        *g -= hyper_b;
    }
    grad
}

/// Result of a MAP fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    /// Objective at the initial weights followed by one value per iteration.
    pub objective: Vec<f64>,
    pub weights: PLWeights,
    pub iterations: usize,
    pub converged: bool,
    /// `(k, j)` with `lambda_kj = 0` in the final weights.
    pub sparsity: Vec<(usize, usize)>,
}

pub fn initial_lambda(
    design: &Design,
    hyper_a: f64,
    hyper_b: f64,
    init: InitScheme,
    rng: &mut RngStream,
) -> Array2<f64> {
    let dim = (design.n_classes(), design.p());
    match init {
        InitScheme::ConstantOne => Array2::ones(dim),
        InitScheme::PriorDraw => {
            let rate = if hyper_b > 0.0 { hyper_b } else { 1.0 };
            Array2::from_shape_simple_fn(dim, || stochastic::gamma_unit(hyper_a, rng) / rate)
        }
    }
}

pub fn fit_map(
    design: &Design,
    hyper_a: f64,
    hyper_b: f64,
    config: &EmConfig,
    rng: &mut RngStream,
) -> Result<EmTrace, EmError> {
    check_hyper(hyper_a, hyper_b)?;
    let init = initial_lambda(design, hyper_a, hyper_b, config.init, rng);
    fit_map_from(design, init, hyper_a, hyper_b, config)
}

/// EM started from explicit weights, e.g. the previous point of a
/// regularization path.
pub fn fit_map_from(
    design: &Design,
    init: Array2<f64>,
    hyper_a: f64,
    hyper_b: f64,
    config: &EmConfig,
) -> Result<EmTrace, EmError> {
    config.validate()?;
    check_hyper(hyper_a, hyper_b)?;
    check_dims(design, init.view())?;
    model::check_lambda(init.view())?;

    let mut weights = PLWeights::new(init, hyper_a, hyper_b)?;
    let mut objective = vec![log_posterior(design, weights.lambda.view(), hyper_a, hyper_b)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        if weights.lambda.iter().fold(0.0f64, |m, &v| m.max(v)) < SCALE_FLOOR {
            log::warn!("total mass collapsed below {SCALE_FLOOR:e} after {iterations} iterations at a = {hyper_a}");
            break;
        }
        weights = em_step(design, weights.lambda.view(), hyper_a, hyper_b)?;
        iterations += 1;
        let value = log_posterior(design, weights.lambda.view(), hyper_a, hyper_b);
        let previous = *objective.last().expect("non-empty");
        objective.push(value);
        if (value - previous).abs() <= config.rel_tol * previous.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    let sparsity = weights.zero_pattern();
    Ok(EmTrace {
        objective,
        weights,
        iterations,
        converged,
        sparsity,
    })
}

fn check_hyper(hyper_a: f64, hyper_b: f64) -> Result<(), EmError> {
    if !(hyper_a > 0.0 && hyper_a.is_finite()) {
        return Err(EmError::InvalidConfig(format!("shape a = {hyper_a} must be positive")));
    }
    if !(hyper_b >= 0.0 && hyper_b.is_finite()) {
        return Err(EmError::InvalidConfig(format!("rate b = {hyper_b} must be non-negative")));
    }
    Ok(())
}

fn check_dims(design: &Design, m: ArrayView2<f64>) -> Result<(), EmError> {
    if m.dim() != (design.n_classes(), design.p()) {
        return Err(ModelError::ShapeMismatch(format!(
            "matrix {:?} for design with K={} p={}",
            m.dim(),
            design.n_classes(),
            design.p()
        ))
        .into());
    }
    Ok(())
}
