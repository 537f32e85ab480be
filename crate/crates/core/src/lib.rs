//! Plackett-Luce regression for multi-class classification.
//!
//! The model scores class `k` for an observation with positive transformed
//! features `W` as `W.lambda_k`, and picks it with probability proportional
//! to that score. Latent feature indicators and exponential arrival times
//! make the Gamma prior on `lambda` conditionally conjugate, which gives
//!
//! * [`em`]: MAP estimation with exactly sparse weights when `a < 1`,
//! * [`gibbs`]: a Gibbs sampler drawing only Exponential, Gamma and
//!   Discrete variates,
//! * [`variational`]: mean-field variational EM with an explicit bound.
//!
//! [`logit`] is the sparse Bayesian multinomial-logit sampler used as the
//! comparison baseline, and [`diagnostics`] holds ESS, accuracy metrics,
//! regularization paths and the benchmark harness.

pub mod chain;
pub mod diagnostics;
pub mod em;
pub mod gibbs;
pub mod io;
pub mod logit;
pub mod model;
pub mod stochastic;
pub mod variational;

mod error;

pub use chain::Chain;
pub use error::Error;
pub use model::{Dataset, Design, FeatureMap, PLWeights, Transform};
pub use stochastic::RngStream;

pub type Result<T, E = Error> = std::result::Result<T, E>;
