//! Gibbs sampler for the Plackett-Luce regression posterior.
//!
//! One sweep draws, in order,
//!
//! ```text
//! C_i | Y_i, lambda      ~ Disc(W_ij lambda_{Y_i j} / W_i.lambda_{Y_i})
//! Z_i | lambda           ~ Exp(W_i . sum_l lambda_l)
//! lambda_kj | Y, C, Z    ~ Gam(a + n_kj, b + sum_i Z_i W_ij)
//! ```
//!
//! optionally followed by a Metropolis-Hastings move on the shape `a`
//! (log-normal random walk, prior `p(a) ∝ 1/a` truncated to `a_bounds`)
//! and by a redraw of the non-identified total mass from its Gam(Kp, b)
//! prior.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::Chain;
use crate::model::{self, AugmentedState, Design, ModelError};
use crate::stochastic::{self, ln_gamma, RngStream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GibbsError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("observation {row} has a zero discrete normalizer")]
    Infeasible { row: usize },
    #[error("chain holds no draws")]
    EmptyChain,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub sample_hyper_a: bool,
    /// Standard deviation of the random walk on `ln a`.
    pub mh_step_scale: f64,
    /// Tune `mh_step_scale` toward 30-45% acceptance during burn-in.
    pub adapt_mh: bool,
    pub rescale_lambda: bool,
    pub a_bounds: (f64, f64),
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            burn_in: 5000,
            samples: 5000,
            thin: 1,
            sample_hyper_a: false,
            mh_step_scale: 0.1,
            adapt_mh: true,
            rescale_lambda: false,
            a_bounds: (1e-3, 1e3),
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<(), GibbsError> {
        if self.samples == 0 {
            return Err(GibbsError::InvalidConfig("samples must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(GibbsError::InvalidConfig("thin must be at least 1".into()));
        }
        if !(self.mh_step_scale >= 0.0 && self.mh_step_scale.is_finite()) {
            return Err(GibbsError::InvalidConfig(format!(
                "mh_step_scale = {}",
                self.mh_step_scale
            )));
        }
        let (lo, hi) = self.a_bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(GibbsError::InvalidConfig(format!("a_bounds = ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// Current weights and shape hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsState {
    pub lambda: Array2<f64>,
    pub a: f64,
}

impl GibbsState {
    pub fn new(lambda: Array2<f64>, a: f64) -> Self {
        Self { lambda, a }
    }
}

/// Shapes `a + n_kj` and rates `b + sum_i Z_i W_ij` of the weight conditionals.
pub fn lambda_conditional(design: &Design, aug: &AugmentedState, a: f64, hyper_b: f64) -> (Array2<f64>, Vec<f64>) {
    let shapes = aug.counts(design).mapv(|n| a + n);
    let mut rates = vec![hyper_b; design.p()];
    for (i, &z) in aug.arrivals.iter().enumerate() {
        for (r, &wij) in rates.iter_mut().zip(design.row(i)) {
            *r += z * wij;
        }
    }
    (shapes, rates)
}

/// Draws every weight from its Gamma conditional given `(C, Z)`.
pub fn sample_lambda(design: &Design, aug: &AugmentedState, a: f64, hyper_b: f64, rng: &mut RngStream) -> Array2<f64> {
    let (shapes, rates) = lambda_conditional(design, aug, a, hyper_b);
    Array2::from_shape_fn(shapes.dim(), |(k, j)| stochastic::gamma_unit(shapes[[k, j]], rng) / rates[j])
}

/// Draws `(C, Z)` given the weights.
pub fn sample_latent(design: &Design, lambda: ArrayView2<f64>, rng: &mut RngStream) -> Result<AugmentedState, GibbsError> {
    let column_mass = lambda.sum_axis(Axis(0));
    let mut components = Vec::with_capacity(design.n());
    let mut arrivals = Vec::with_capacity(design.n());
    let mut scratch = vec![0.0; design.p()];
    for (i, &y) in design.labels().iter().enumerate() {
        let w = design.row(i);
        let mut total = 0.0;
        for ((s, &wij), &l) in scratch.iter_mut().zip(w).zip(lambda.row(y).iter()) {
            *s = wij * l;
            total += *s;
        }
        if !(total > 0.0) || !total.is_finite() {
            return Err(GibbsError::Infeasible { row: i });
        }
        components.push(stochastic::discrete_unchecked(&scratch, total, rng));
    }
    for i in 0..design.n() {
        let rate = model::dot(design.row(i), column_mass.view());
        arrivals.push(-rng.uniform_open().ln() / rate);
    }
    Ok(AugmentedState {
        components,
        arrivals,
    })
}

/// One sweep `C -> Z -> lambda`; returns the latent state drawn on the way.
pub fn gibbs_sweep(
    state: &mut GibbsState,
    design: &Design,
    hyper_b: f64,
    rng: &mut RngStream,
) -> Result<AugmentedState, GibbsError> {
    let aug = sample_latent(design, state.lambda.view(), rng)?;
    state.lambda = sample_lambda(design, &aug, state.a, hyper_b, rng);
    Ok(aug)
}

/// `sum_kj ln Gam(lambda_kj; a, b)`.
pub fn log_gamma_prior(lambda: ArrayView2<f64>, a: f64, hyper_b: f64) -> f64 {
    let count = lambda.len() as f64;
    let sum_log: f64 = lambda.iter().map(|l| l.ln()).sum();
    let sum: f64 = lambda.sum();
    count * (a * hyper_b.ln() - ln_gamma(a)) + (a - 1.0) * sum_log - hyper_b * sum
}

/// Random-walk Metropolis-Hastings on `ln a`.
///
/// Proposal `a' = a exp(scale * eps)`. The acceptance ratio is
/// `exp(log_density(a') - log_density(a)) * a'/a`, where `log_density`
/// includes the prior on `a` and the `a'/a` factor is the proposal
/// Jacobian. Proposals outside `bounds` are rejected.
pub fn mh_step_log_scale(
    a: f64,
    log_density: impl Fn(f64) -> f64,
    scale: f64,
    bounds: (f64, f64),
    rng: &mut RngStream,
) -> (f64, bool) {
    let step = scale * rng.standard_normal();
    let proposal = a * step.exp();
    if proposal < bounds.0 || proposal > bounds.1 {
        return (a, false);
    }
    let log_ratio = log_density(proposal) - log_density(a) + step;
    if log_ratio >= 0.0 || rng.uniform_open().ln() < log_ratio {
        (proposal, true)
    } else {
        (a, false)
    }
}

/// Log acceptance ratio for moving the shape from `a` to `proposal`.
pub fn mh_log_ratio_a(a: f64, proposal: f64, lambda: ArrayView2<f64>, hyper_b: f64) -> f64 {
    let target = |x: f64| log_gamma_prior(lambda, x, hyper_b) - x.ln();
    target(proposal) - target(a) + (proposal / a).ln()
}

/// MH update of the shape `a` given the weights, under `p(a) ∝ 1/a` on `bounds`.
pub fn mh_update_a(
    a: f64,
    lambda: ArrayView2<f64>,
    hyper_b: f64,
    scale: f64,
    bounds: (f64, f64),
    rng: &mut RngStream,
) -> (f64, bool) {
    mh_step_log_scale(a, |x| log_gamma_prior(lambda, x, hyper_b) - x.ln(), scale, bounds, rng)
}

/// Rescales the weights to a total mass drawn from Gam(Kp, b); the
/// normalized weights are unchanged.
pub fn rescale_total_mass(lambda: ArrayView2<f64>, hyper_b: f64, rng: &mut RngStream) -> Array2<f64> {
    let total = lambda.sum();
    let target = stochastic::gamma_unit(lambda.len() as f64, rng) / hyper_b;
    lambda.mapv(|v| v * (target / total))
}

/// Posterior mode `(Kp - 1) / b` of the total mass.
pub fn total_mass_map(n_classes: usize, p: usize, hyper_b: f64) -> f64 {
    ((n_classes * p) as f64 - 1.0) / hyper_b
}

pub fn run_chain(
    design: &Design,
    hyper_a: f64,
    hyper_b: f64,
    config: &GibbsConfig,
    rng: &mut RngStream,
) -> Result<Chain, GibbsError> {
    let init = GibbsState::new(Array2::ones((design.n_classes(), design.p())), hyper_a);
    run_chain_from(design, init, hyper_b, config, rng)
}

pub fn run_chain_from(
    design: &Design,
    mut state: GibbsState,
    hyper_b: f64,
    config: &GibbsConfig,
    rng: &mut RngStream,
) -> Result<Chain, GibbsError> {
    config.validate()?;
    if !(hyper_b > 0.0 && hyper_b.is_finite()) {
        return Err(GibbsError::InvalidConfig(format!("rate b = {hyper_b} must be positive")));
    }
    if !(state.a > 0.0 && state.a.is_finite()) {
        return Err(GibbsError::InvalidConfig(format!("shape a = {} must be positive", state.a)));
    }
    if state.lambda.dim() != (design.n_classes(), design.p()) || state.lambda.iter().any(|&v| !(v > 0.0)) {
        return Err(GibbsError::InvalidConfig("initial weights must be strictly positive with shape K x p".into()));
    }

    let mut chain = Chain::new("lambda", design.n_classes(), design.p(), config.samples);
    if config.sample_hyper_a {
        chain.hyper_name = Some("a".into());
    }
    let mut scale = config.mh_step_scale;
    let mut window = (0usize, 0usize);

    let total = config.burn_in + config.samples * config.thin;
    for sweep in 0..total {
        gibbs_sweep(&mut state, design, hyper_b, rng)?;
        let burning = sweep < config.burn_in;
        if config.sample_hyper_a {
            let (a, accepted) = mh_update_a(state.a, state.lambda.view(), hyper_b, scale, config.a_bounds, rng);
            state.a = a;
            if burning {
                window.0 += accepted as usize;
                window.1 += 1;
                if config.adapt_mh && window.1 == 50 {
                    let rate = window.0 as f64 / 50.0;
                    if rate < 0.30 {
                        scale *= 0.8;
                    } else if rate > 0.45 {
                        scale *= 1.25;
                    }
                    window = (0, 0);
                }
            } else {
                chain.mh_accepted += accepted as usize;
                chain.mh_proposed += 1;
            }
        }
        if config.rescale_lambda {
            state.lambda = rescale_total_mass(state.lambda.view(), hyper_b, rng);
        }
        if !burning && (sweep - config.burn_in + 1) % config.thin == 0 {
            let ll = model::log_likelihood(design, state.lambda.view());
            chain.push(state.lambda.view(), ll, config.sample_hyper_a.then_some(state.a));
        }
    }
    Ok(chain)
}

/// Bayesian model average of the class probabilities over stored draws.
pub fn posterior_predict(chain: &Chain, w: &[f64]) -> Result<Vec<f64>, GibbsError> {
    if chain.is_empty() {
        return Err(GibbsError::EmptyChain);
    }
    let mut acc = vec![0.0; chain.rows];
    for s in 0..chain.len() {
        let p = model::class_probabilities(w, chain.draw(s))?;
        acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    let n = chain.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// Per-entry summaries of the stored draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: Array2<f64>,
    pub median: Array2<f64>,
    /// 5% quantile
    pub lower: Array2<f64>,
    /// 95% quantile
    pub upper: Array2<f64>,
}

/// Summaries of the normalized weights `lambda / Lambda`, normalizing each draw.
pub fn posterior_summaries(chain: &Chain) -> Result<PosteriorSummary, GibbsError> {
    if chain.is_empty() {
        return Err(GibbsError::EmptyChain);
    }
    Ok(summarize_draws(chain.normalized_draws().view(), chain.rows, chain.cols))
}

/// Column-wise mean, median and 5%/95% quantiles of `draws` reshaped to `rows x cols`.
pub fn summarize_draws(draws: ArrayView2<f64>, rows: usize, cols: usize) -> PosteriorSummary {
    let mut mean = Vec::with_capacity(rows * cols);
    let mut median = Vec::with_capacity(rows * cols);
    let mut lower = Vec::with_capacity(rows * cols);
    let mut upper = Vec::with_capacity(rows * cols);
    for column in draws.columns() {
        let mut sorted = column.to_vec();
        sorted.sort_by(f64::total_cmp);
        mean.push(column.mean().unwrap_or(f64::NAN));
        median.push(quantile_sorted(&sorted, 0.5));
        lower.push(quantile_sorted(&sorted, 0.05));
        upper.push(quantile_sorted(&sorted, 0.95));
    }
    let shape = (rows, cols);
    PosteriorSummary {
        mean: Array2::from_shape_vec(shape, mean).expect("shape"),
        median: Array2::from_shape_vec(shape, median).expect("shape"),
        lower: Array2::from_shape_vec(shape, lower).expect("shape"),
        upper: Array2::from_shape_vec(shape, upper).expect("shape"),
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_design() -> Design {
        Design::new(array![[1.0, 2.0], [0.5, 1.0], [2.0, 0.3]], vec![0, 1, 1], 2).unwrap()
    }

    #[test]
    fn conditional_arithmetic() {
        // n_kj = 2 and sum Z W = 3 with a = b = 1 gives Gam(3, 4)
        let design = Design::new(array![[1.0], [2.0]], vec![0, 0], 1).unwrap();
        let aug = AugmentedState {
            components: vec![0, 0],
            arrivals: vec![1.0, 1.0],
        };
        let (shapes, rates) = lambda_conditional(&design, &aug, 1.0, 1.0);
        assert_eq!(shapes[[0, 0]], 3.0);
        assert_eq!(rates[0], 4.0);
    }

    #[test]
    fn scale_zero_always_accepts() {
        let mut rng = RngStream::new(1);
        let lambda = array![[0.3, 2.0], [1.0, 0.01]];
        for _ in 0..100 {
            let (a, acc) = mh_update_a(1.7, lambda.view(), 1.0, 0.0, (1e-3, 1e3), &mut rng);
            assert!(acc);
            assert_eq!(a, 1.7);
        }
    }

    #[test]
    fn log_ratio_matches_direct_density() {
        // weights at the Gam(2, b) mode (a - 1) / b = 1 / b
        let b: f64 = 1.5;
        let lambda = Array2::from_elem((2, 3), 1.0 / b);
        let (a, a2) = (2.0, 2.4);
        let density = |shape: f64, x: f64| b.powf(shape) * x.powf(shape - 1.0) * (-b * x).exp() / statrs::function::gamma::gamma(shape);
        let direct: f64 = (lambda.iter().map(|&x| density(a2, x)).product::<f64>()
            / lambda.iter().map(|&x| density(a, x)).product::<f64>())
            * (a / a2)
            * (a2 / a);
        let got = mh_log_ratio_a(a, a2, lambda.view(), b).exp();
        assert!((got - direct).abs() < 1e-12 * direct, "{got} vs {direct}");
    }

    #[test]
    fn rescale_preserves_normalized_weights() {
        let mut rng = RngStream::new(2);
        let lambda = array![[0.2, 1.3, 0.5], [2.0, 0.1, 0.9]];
        let before = model::normalize(lambda.view());
        let after = model::normalize(rescale_total_mass(lambda.view(), 1.0, &mut rng).view());
        for (x, y) in before.iter().zip(after.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn rescaled_mass_has_prior_mean() {
        let mut rng = RngStream::new(3);
        let lambda = array![[0.2, 1.3], [2.0, 0.1]];
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| rescale_total_mass(lambda.view(), 2.0, &mut rng).sum()).sum::<f64>() / n as f64;
        // Kp / b = 4 / 2
        assert!((mean / 2.0 - 1.0).abs() < 0.01);
    }

    #[test]
    fn map_total_mass() {
        assert_eq!(total_mass_map(3, 9, 1.0), 26.0);
    }

    #[test]
    fn chain_bookkeeping_and_determinism() {
        let design = toy_design();
        let config = GibbsConfig {
            burn_in: 10,
            samples: 100,
            ..GibbsConfig::default()
        };
        let a = run_chain(&design, 1.0, 1.0, &config, &mut RngStream::new(4)).unwrap();
        let b = run_chain(&design, 1.0, 1.0, &config, &mut RngStream::new(4)).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        assert!(a.draws.iter().all(|&v| v > 0.0));

        let thinned = GibbsConfig { thin: 3, ..config };
        assert_eq!(run_chain(&design, 1.0, 1.0, &thinned, &mut RngStream::new(4)).unwrap().len(), 100);
    }

    #[test]
    fn single_observation_component_law_matches_e_step() {
        let design = Design::new(array![[1.0, 2.0, 0.5]], vec![0], 1).unwrap();
        let lambda = array![[0.5, 0.25, 2.0]];
        let expected = crate::em::e_step_responsibilities(&design, lambda.view()).unwrap();
        let mut rng = RngStream::new(5);
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_latent(&design, lambda.view(), &mut rng).unwrap().components[0]] += 1;
        }
        for j in 0..3 {
            let p = expected.responsibilities[[0, j]];
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((counts[j] as f64 / n as f64 - p).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn predict_averages_draws() {
        let mut chain = Chain::new("lambda", 2, 1, 2);
        chain.push(array![[1.0], [0.0]].view(), 0.0, None);
        assert_eq!(posterior_predict(&chain, &[1.0]).unwrap(), vec![1.0, 0.0]);
        chain.push(array![[0.0], [1.0]].view(), 0.0, None);
        assert_eq!(posterior_predict(&chain, &[1.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(
            posterior_predict(&Chain::new("lambda", 2, 1, 0), &[1.0]),
            Err(GibbsError::EmptyChain)
        );
    }

    #[test]
    fn summaries() {
        let draws = array![[1.0], [2.0], [3.0]];
        let s = summarize_draws(draws.view(), 1, 1);
        assert_eq!(s.median[[0, 0]], 2.0);
        assert_eq!(s.mean[[0, 0]], 2.0);

        let mut chain = Chain::new("lambda", 1, 2, 3);
        for _ in 0..3 {
            chain.push(array![[1.0, 3.0]].view(), 0.0, None);
        }
        let s = posterior_summaries(&chain).unwrap();
        assert_eq!(s.mean, array![[0.25, 0.75]]);
        assert_eq!(s.median, s.mean);
    }

    #[test]
    fn rejects_bad_config() {
        let design = toy_design();
        let mut rng = RngStream::new(6);
        let bad = GibbsConfig {
            samples: 0,
            ..GibbsConfig::default()
        };
        assert!(run_chain(&design, 1.0, 1.0, &bad, &mut rng).is_err());
        let bad = GibbsConfig {
            thin: 0,
            ..GibbsConfig::default()
        };
        assert!(run_chain(&design, 1.0, 1.0, &bad, &mut rng).is_err());
        assert!(run_chain(&design, 1.0, 0.0, &GibbsConfig::default(), &mut rng).is_err());
    }
}
