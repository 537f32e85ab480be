//! Sparse Bayesian multinomial-logit sampler, the comparison baseline.
//!
//! Class `K` is the reference with zero coefficients. The prior is the
//! Bayesian lasso hierarchy
//!
//! ```text
//! beta_kj | tau_kj ~ N(0, tau_kj)
//! tau_kj          ~ Exp(theta^2 / 2)
//! theta^2         ~ Gam(c, d)
//! ```
//!
//! so that `beta_kj | theta` is Laplace with rate `theta`. Each class block
//! is updated by the Holmes-Held auxiliary scheme: given the other classes
//! the block is a binary logistic regression with offset, the logistic
//! noise is a scale mixture of normals with Kolmogorov-Smirnov mixing, and
//! `(z, mixing, beta_k)` are drawn in turn.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::Chain;
use crate::model::{Dataset, ModelError};
use crate::stochastic::{self, RngStream};

const BETA_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogitError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite linear score {value} for class {class}")]
    Numeric { class: usize, value: f64 },
    #[error("mixing-variance sampler stalled at observation {row}, class {class}: {proposals} proposals rejected (residual {residual})")]
    SamplerStall {
        row: usize,
        class: usize,
        proposals: usize,
        residual: f64,
    },
    #[error("posterior covariance for class {class} is not positive definite")]
    Covariance { class: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogitConfig {
    pub burn_in: usize,
    pub samples: usize,
    pub thin: usize,
    pub hyper_c: f64,
    pub hyper_d: f64,
    /// Append a constant-1 covariate.
    pub intercept: bool,
    pub shrink_intercept: bool,
    /// Prior variance of the intercept when it is not shrunk.
    pub intercept_variance: f64,
    pub initial_theta: f64,
    /// Hold `theta` at `initial_theta`.
    pub fix_theta: bool,
    /// Sample from the prior: `beta_k` is drawn from `N(0, tau_k)` and the
    /// data are ignored.
    pub prior_only: bool,
    pub max_proposals: usize,
}

impl Default for LogitConfig {
    fn default() -> Self {
        Self {
            burn_in: 5000,
            samples: 5000,
            thin: 1,
            hyper_c: 1.0,
            hyper_d: 1.0,
            intercept: true,
            shrink_intercept: false,
            intercept_variance: 100.0,
            initial_theta: 1.0,
            fix_theta: false,
            prior_only: false,
            max_proposals: 10_000,
        }
    }
}

impl LogitConfig {
    pub fn validate(&self) -> Result<(), LogitError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(LogitError::InvalidConfig(format!("{name} = {v} must be positive and finite")))
            }
        };
        positive("hyper_c", self.hyper_c)?;
        positive("hyper_d", self.hyper_d)?;
        positive("intercept_variance", self.intercept_variance)?;
        positive("initial_theta", self.initial_theta)?;
        if self.samples == 0 || self.thin == 0 || self.max_proposals == 0 {
            return Err(LogitError::InvalidConfig(
                "samples, thin and max_proposals must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Covariates with the optional intercept column appended last.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitDesign {
    x: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    intercept: bool,
}

impl LogitDesign {
    pub fn new(data: &Dataset, intercept: bool) -> Result<Self, LogitError> {
        if data.n_classes() < 2 {
            return Err(LogitError::InvalidConfig("at least two classes are required".into()));
        }
        let (n, d) = (data.n(), data.d());
        let q = d + intercept as usize;
        let mut x = Array2::ones((n, q));
        x.slice_mut(ndarray::s![.., ..d]).assign(&data.x());
        Ok(Self {
            x,
            labels: data.labels().to_vec(),
            n_classes: data.n_classes(),
            intercept,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of coefficients per class, intercept included.
    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    /// Covariate row with the intercept appended when the design has one.
    pub fn augment(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut row = Array1::ones(self.q());
        row.slice_mut(ndarray::s![..x.len()]).assign(&x);
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitState {
    /// `(K-1) x q`
    pub beta: Array2<f64>,
    pub tau: Array2<f64>,
    pub theta: f64,
    /// Latent utilities `z_ik` of the current block updates, `n x (K-1)`.
    pub u: Array2<f64>,
    /// Mixing variances of the logistic noise, `n x (K-1)`.
    pub mixing: Array2<f64>,
    pub hyper_c: f64,
    pub hyper_d: f64,
    /// `false` for coordinates whose `tau` is held fixed.
    pub shrunk: Array2<bool>,
}

impl LogitState {
    pub fn initial(design: &LogitDesign, config: &LogitConfig) -> Self {
        let dim = (design.n_classes() - 1, design.q());
        let intercept_col = design.has_intercept().then(|| design.q() - 1);
        let shrunk = Array2::from_shape_fn(dim, |(_, j)| config.shrink_intercept || Some(j) != intercept_col);
        let tau = shrunk.mapv(|s| if s { 1.0 } else { config.intercept_variance });
        Self {
            beta: Array2::zeros(dim),
            tau,
            theta: config.initial_theta,
            u: Array2::zeros((design.n(), dim.0)),
            mixing: Array2::ones((design.n(), dim.0)),
            hyper_c: config.hyper_c,
            hyper_d: config.hyper_d,
            shrunk,
        }
    }
}

/// Class probabilities with reference class `K`, computed by softmax with
/// max-subtraction.
pub fn logit_probabilities(x: ArrayView1<f64>, beta: ArrayView2<f64>) -> Result<Vec<f64>, LogitError> {
    if x.len() != beta.ncols() {
        return Err(ModelError::ShapeMismatch(format!(
            "covariate length {} against {} coefficients",
            x.len(),
            beta.ncols()
        ))
        .into());
    }
    let mut scores: Vec<f64> = beta.rows().into_iter().map(|b| b.dot(&x)).collect();
    scores.push(0.0);
    if let Some((class, &value)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
        return Err(LogitError::Numeric { class, value });
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    Ok(scores.into_iter().map(|s| s / total).collect())
}

/// Draws `tau_kj` from its full conditional: `1/tau` is inverse-Gaussian
/// with mean `theta / |beta|` and shape `theta^2`. `|beta|` is floored at
/// `1e-10`.
pub fn update_tau(beta_kj: f64, theta: f64, rng: &mut RngStream) -> Result<f64, LogitError> {
    if !(theta > 0.0 && theta.is_finite()) || !beta_kj.is_finite() {
        return Err(LogitError::InvalidConfig(format!("update_tau at beta = {beta_kj}, theta = {theta}")));
    }
    let mean = theta / beta_kj.abs().max(BETA_FLOOR);
    let precision = stochastic::inverse_gaussian_unchecked(mean, theta * theta, rng);
    Ok(1.0 / precision.max(f64::MIN_POSITIVE))
}

/// Conjugate draw of `theta^2 | tau ~ Gam(N + c, sum(tau)/2 + d)` where `N`
/// is the number of shrunk coefficients passed in.
pub fn update_theta(tau: &[f64], hyper_c: f64, hyper_d: f64, rng: &mut RngStream) -> Result<f64, LogitError> {
    if !(hyper_c > 0.0 && hyper_d > 0.0) {
        return Err(LogitError::InvalidConfig(format!("c = {hyper_c}, d = {hyper_d} must be positive")));
    }
    let shape = tau.len() as f64 + hyper_c;
    let rate = tau.iter().sum::<f64>() / 2.0 + hyper_d;
    stochastic::sample_gamma(shape, rate, rng).map_err(|e| LogitError::InvalidConfig(e.to_string()))
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `m + e` with `e` standard logistic, truncated to `z > 0` when `positive`
/// and to `z <= 0` otherwise.
pub fn sample_truncated_logistic(m: f64, positive: bool, rng: &mut RngStream) -> f64 {
    let u = rng.uniform_open();
    if positive {
        // 1 - F(e) = sigma(m) (1 - U)
        let log_tail = log_sigmoid(m) + (1.0 - u).ln();
        m + (-log_tail.exp()).ln_1p() - log_tail
    } else {
        let log_head = log_sigmoid(-m) + u.ln();
        m + log_head - (-log_head.exp()).ln_1p()
    }
}

/// Mixing variance `lambda` of the logistic noise given the residual `r`,
/// by rejection from `GIG(1/2, 1, r^2)`. The squeeze uses the alternating
/// series of the Kolmogorov-Smirnov density. Returns `None` after
/// `max_proposals` rejections.
pub fn sample_ks_mixing(residual: f64, max_proposals: usize, rng: &mut RngStream) -> Option<f64> {
    let r = residual.abs();
    for _ in 0..max_proposals {
        let lambda = if r < 1e-10 {
            let y = rng.standard_normal();
            y * y
        } else {
            r / stochastic::inverse_gaussian_unchecked(1.0, r, rng)
        };
        if !(lambda > 0.0 && lambda.is_finite()) {
            continue;
        }
        let u = rng.uniform_open();
        let accept = if lambda > 4.0 / 3.0 {
            rightmost_interval(u, lambda)
        } else {
            leftmost_interval(u, lambda)
        };
        if accept {
            return Some(lambda);
        }
    }
    None
}

fn rightmost_interval(u: f64, lambda: f64) -> bool {
    let x = (-0.5 * lambda).exp();
    let mut z = 1.0;
    let mut j = 0u32;
    loop {
        j += 1;
        let t = f64::from((j + 1) * (j + 1));
        z -= t * x.powf(t - 1.0);
        if z > u {
            return true;
        }
        j += 1;
        let t = f64::from((j + 1) * (j + 1));
        z += t * x.powf(t - 1.0);
        if z < u {
            return false;
        }
    }
}

fn leftmost_interval(u: f64, lambda: f64) -> bool {
    let pi2 = std::f64::consts::PI.powi(2);
    let h = 0.5 * 2f64.ln() + 2.5 * std::f64::consts::PI.ln() - 2.5 * lambda.ln() - pi2 / (2.0 * lambda) + 0.5 * lambda;
    let log_u = u.ln();
    let x = (-pi2 / (2.0 * lambda)).exp();
    let k = lambda / pi2;
    let mut z = 1.0f64;
    let mut j = 0u32;
    loop {
        j += 1;
        z -= k * x.powf(f64::from(j * j) - 1.0);
        if h + z.ln() > log_u {
            return true;
        }
        j += 1;
        let t = f64::from((j + 1) * (j + 1));
        z += t * x.powf(t - 1.0);
        if h + z.ln() < log_u {
            return false;
        }
    }
}

/// Linear scores `x_i . beta_k` for every observation and non-reference class.
pub fn linear_scores(design: &LogitDesign, beta: ArrayView2<f64>) -> Array2<f64> {
    design.x().dot(&beta.t())
}

/// Holmes-Held update of class block `k`: latent utilities from truncated
/// logistics, mixing variances by rejection, then `beta_k` from its Gaussian
/// conditional.
pub fn update_beta_block(
    k: usize,
    state: &mut LogitState,
    design: &LogitDesign,
    config: &LogitConfig,
    rng: &mut RngStream,
) -> Result<(), LogitError> {
    let q = design.q();
    if k + 1 >= design.n_classes() || state.beta.dim() != (design.n_classes() - 1, q) {
        return Err(ModelError::ShapeMismatch(format!("class block {k} does not match the state")).into());
    }
    if config.prior_only {
        for j in 0..q {
            state.beta[[k, j]] = state.tau[[k, j]].sqrt() * rng.standard_normal();
        }
        return Ok(());
    }

    let scores = linear_scores(design, state.beta.view());
    let x = design.x();
    let mut offsets = Vec::with_capacity(design.n());
    for (i, &y) in design.labels().iter().enumerate() {
        // log-sum-exp over the other classes, reference included
        let row = scores.row(i);
        let others = row
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != k)
            .map(|(_, &s)| s)
            .chain(std::iter::once(0.0));
        let max = others.clone().fold(f64::NEG_INFINITY, f64::max);
        let offset = max + others.map(|s| (s - max).exp()).sum::<f64>().ln();
        let m = scores[[i, k]] - offset;
        if !m.is_finite() {
            return Err(LogitError::Numeric { class: k, value: m });
        }
        let z = sample_truncated_logistic(m, y == k, rng);
        let mixing = sample_ks_mixing(z - m, config.max_proposals, rng).ok_or(LogitError::SamplerStall {
            row: i,
            class: k,
            proposals: config.max_proposals,
            residual: z - m,
        })?;
        state.u[[i, k]] = z;
        state.mixing[[i, k]] = mixing;
        offsets.push(offset);
    }

    let mut precision = DMatrix::<f64>::zeros(q, q);
    let mut rhs = DVector::<f64>::zeros(q);
    for i in 0..design.n() {
        let weight = 1.0 / state.mixing[[i, k]];
        let target = state.u[[i, k]] + offsets[i];
        let row = x.row(i);
        for a in 0..q {
            rhs[a] += weight * row[a] * target;
            for b in 0..=a {
                precision[(a, b)] += weight * row[a] * row[b];
            }
        }
    }
    for a in 0..q {
        for b in 0..a {
            precision[(b, a)] = precision[(a, b)];
        }
        precision[(a, a)] += 1.0 / state.tau[[k, a]];
    }
    let chol = precision.cholesky().ok_or(LogitError::Covariance { class: k })?;
    let mean = chol.solve(&rhs);
    let noise = DVector::from_fn(q, |_, _| rng.standard_normal());
    // L^T v = noise gives v ~ N(0, (L L^T)^-1)
    let offset = chol
        .l()
        .transpose()
        .solve_upper_triangular(&noise)
        .ok_or(LogitError::Covariance { class: k })?;
    for j in 0..q {
        state.beta[[k, j]] = mean[j] + offset[j];
    }
    Ok(())
}

/// Sum of log class probabilities of the observed labels.
pub fn logit_log_likelihood(design: &LogitDesign, beta: ArrayView2<f64>) -> f64 {
    let scores = linear_scores(design, beta);
    design
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = scores.row(i);
            let max = row.iter().copied().fold(0.0, f64::max);
            let norm = max + ((-max).exp() + row.iter().map(|s| (s - max).exp()).sum::<f64>()).ln();
            let own = if y + 1 == design.n_classes() { 0.0 } else { row[y] };
            own - norm
        })
        .sum()
}

/// Runs the sampler from the default initial state. Stored draws are the
/// `(K-1) x q` coefficient matrices with `theta` as the hyper column.
pub fn run_logit_chain(design: &LogitDesign, config: &LogitConfig, rng: &mut RngStream) -> Result<Chain, LogitError> {
    let state = LogitState::initial(design, config);
    run_logit_chain_from(design, state, config, rng)
}

pub fn run_logit_chain_from(
    design: &LogitDesign,
    mut state: LogitState,
    config: &LogitConfig,
    rng: &mut RngStream,
) -> Result<Chain, LogitError> {
    config.validate()?;
    let classes = design.n_classes() - 1;
    let mut chain = Chain::new("beta", classes, design.q(), config.samples);
    chain.hyper_name = Some("theta".into());
    let total = config.burn_in + config.samples * config.thin;
    let mut shrunk_tau = Vec::with_capacity(state.tau.len());
    for sweep in 0..total {
        for k in 0..classes {
            update_beta_block(k, &mut state, design, config, rng)?;
            for j in 0..design.q() {
                if state.shrunk[[k, j]] {
                    state.tau[[k, j]] = update_tau(state.beta[[k, j]], state.theta, rng)?;
                }
            }
        }
        if !config.fix_theta {
            shrunk_tau.clear();
            shrunk_tau.extend(state.tau.iter().zip(state.shrunk.iter()).filter(|(_, &s)| s).map(|(&t, _)| t));
            if !shrunk_tau.is_empty() {
                state.theta = update_theta(&shrunk_tau, state.hyper_c, state.hyper_d, rng)?.sqrt();
            }
        }
        if sweep >= config.burn_in && (sweep - config.burn_in + 1) % config.thin == 0 {
            let ll = if config.prior_only {
                f64::NAN
            } else {
                logit_log_likelihood(design, state.beta.view())
            };
            chain.push(state.beta.view(), ll, Some(state.theta));
        }
    }
    Ok(chain)
}

/// Posterior-mean class probabilities for one augmented covariate row.
pub fn logit_predict(chain: &Chain, x: ArrayView1<f64>) -> Result<Vec<f64>, LogitError> {
    if chain.is_empty() {
        return Err(ModelError::NoDraws.into());
    }
    let mut acc = vec![0.0; chain.rows + 1];
    for s in 0..chain.len() {
        let p = logit_probabilities(x, chain.draw(s))?;
        acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    Ok(acc.into_iter().map(|v| v / chain.len() as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn probabilities() {
        let p = logit_probabilities(array![1.0].view(), array![[2f64.ln()], [3f64.ln()]].view()).unwrap();
        assert!((p[0] - 2.0 / 6.0).abs() < 1e-12);
        assert!((p[1] - 3.0 / 6.0).abs() < 1e-12);
        assert!((p[2] - 1.0 / 6.0).abs() < 1e-12);
        let zero = logit_probabilities(array![1.0, -2.0].view(), Array2::zeros((3, 2)).view()).unwrap();
        assert!(zero.iter().all(|&v| (v - 0.25).abs() < 1e-12));
        let big = logit_probabilities(array![1.0].view(), array![[800.0], [0.0]].view()).unwrap();
        assert!((big[0] - 1.0).abs() < 1e-12);
        assert!(logit_probabilities(array![f64::NAN].view(), array![[1.0]].view()).is_err());
    }

    #[test]
    fn theta_conjugate_mean() {
        let tau = Array2::from_elem((3, 5), 4.0 / 15.0);
        let mut rng = RngStream::new(5);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| update_theta(tau.as_slice().unwrap(), 1.0, 1.0, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 16.0 / 3.0).abs() < 0.01 * 16.0 / 3.0);
    }

    #[test]
    fn tau_is_positive() {
        let mut rng = RngStream::new(2);
        for beta in [0.0, 1e-300, -3.0, 50.0] {
            for _ in 0..1000 {
                let t = update_tau(beta, 2.0, &mut rng).unwrap();
                assert!(t > 0.0 && t.is_finite());
            }
        }
    }

    #[test]
    fn truncated_logistic_respects_sign() {
        let mut rng = RngStream::new(9);
        for m in [-40.0, -3.0, 0.0, 2.5, 40.0] {
            for _ in 0..2000 {
                let pos = sample_truncated_logistic(m, true, &mut rng);
                let neg = sample_truncated_logistic(m, false, &mut rng);
                assert!(pos > 0.0, "m = {m}, z = {pos}");
                assert!(neg <= 0.0, "m = {m}, z = {neg}");
            }
        }
    }

    #[test]
    fn truncated_logistic_mean_at_zero() {
        // E[e | e > 0] = 2 ln 2 for the standard logistic
        let mut rng = RngStream::new(4);
        let n = 200_000;
        let mean = (0..n).map(|_| sample_truncated_logistic(0.0, true, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 2.0 * 2f64.ln()).abs() < 0.01);
    }

    #[test]
    fn mixing_scale_gives_logistic_noise() {
        // prior-mixed normals: draw lambda from the KS mixing law by sampling
        // z ~ logistic then lambda | z; the implied e / sqrt(lambda) is N(0,1)
        let mut rng = RngStream::new(12);
        let n = 100_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let u = rng.uniform_open();
            let e = (u / (1.0 - u)).ln();
            let lambda = sample_ks_mixing(e, 10_000, &mut rng).unwrap();
            sum_sq += e * e / lambda;
        }
        assert!((sum_sq / n as f64 - 1.0).abs() < 0.02);
    }

    #[test]
    fn chain_bookkeeping_and_determinism() {
        let x = array![[-1.0], [-0.5], [0.2], [0.8], [1.5], [2.0]];
        let data = Dataset::new(x, vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let design = LogitDesign::new(&data, true).unwrap();
        let config = LogitConfig {
            burn_in: 20,
            samples: 30,
            thin: 2,
            ..LogitConfig::default()
        };
        let a = run_logit_chain(&design, &config, &mut RngStream::new(1)).unwrap();
        let b = run_logit_chain(&design, &config, &mut RngStream::new(1)).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!((a.rows, a.cols), (2, 2));
        assert_eq!(a.hyper.as_ref().unwrap().len(), 30);
        assert_eq!(a, b);
    }

    #[test]
    fn separable_sign_recovery() {
        let x = array![[-2.0], [-1.5], [-1.0], [-0.5], [0.5], [1.0], [1.5], [2.0]];
        let data = Dataset::new(x, vec![1, 1, 1, 1, 0, 0, 0, 0], 2).unwrap();
        let design = LogitDesign::new(&data, true).unwrap();
        let config = LogitConfig {
            burn_in: 500,
            samples: 2000,
            ..LogitConfig::default()
        };
        let chain = run_logit_chain(&design, &config, &mut RngStream::new(3)).unwrap();
        let slope = chain.coordinate(0).mean().unwrap();
        assert!(slope > 0.5, "slope {slope}");
    }

    #[test]
    fn intercept_not_shrunk_by_default() {
        let data = Dataset::new(array![[0.0], [1.0]], vec![0, 1], 2).unwrap();
        let design = LogitDesign::new(&data, true).unwrap();
        let state = LogitState::initial(&design, &LogitConfig::default());
        assert_eq!(state.shrunk, array![[true, false]]);
        assert_eq!(state.tau[[0, 1]], 100.0);
    }
}
