//! Seeded random variate generation.
//!
//! Every sampler takes an explicit [`RngStream`]; there is no global
//! generator. Streams are ChaCha8 generators keyed by a 64-bit seed and a
//! 64-bit stream id, so replications can be fanned out to workers by
//! deriving one stream per cell.

pub(crate) mod special;

pub use special::{digamma, ln_gamma};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StochasticError {
    #[error("invalid parameter {name} = {value} for {distribution}")]
    InvalidParameter {
        distribution: &'static str,
        name: &'static str,
        value: f64,
    },
    #[error("invalid discrete weights: {0}")]
    InvalidWeights(String),
    #[error("{function} is undefined at x = {x}")]
    Domain { function: &'static str, x: f64 },
}

/// A single-owner pseudo-random stream.
///
/// Two streams built from the same `(seed, stream_id)` produce identical
/// sequences; different stream ids index disjoint ChaCha keystreams.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    /// Derives an independent child stream by drawing a fresh seed from this
    /// stream. Used to hand one stream to each worker.
    pub fn fork(&mut self, stream_id: u64) -> Self {
        let seed = self.rng.next_u64();
        Self::with_stream(seed, stream_id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn check_positive(distribution: &'static str, name: &'static str, value: f64) -> Result<(), StochasticError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(StochasticError::InvalidParameter {
            distribution,
            name,
            value,
        })
    }
}

/// Exp(rate) by inversion.
pub fn sample_exponential(rate: f64, rng: &mut RngStream) -> Result<f64, StochasticError> {
    check_positive("exponential", "rate", rate)?;
    Ok(exp1(rng) / rate)
}

#[inline]
fn exp1(rng: &mut RngStream) -> f64 {
    -rng.uniform_open().ln()
}

/// Gam(shape, rate) in the shape-rate parameterisation (mean shape/rate).
///
/// Shape >= 1 uses Marsaglia-Tsang squeeze/rejection. Shape < 1 draws
/// `G(shape + 1) * U^(1/shape)`, evaluated in log space because
/// `U^(1/shape)` underflows for shapes near zero. The result is floored at
/// `f64::MIN_POSITIVE` so downstream code can rely on strictly positive
/// draws; the floor is only reached for shapes below roughly 1e-3.
pub fn sample_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> Result<f64, StochasticError> {
    check_positive("gamma", "shape", shape)?;
    check_positive("gamma", "rate", rate)?;
    Ok(gamma_unit(shape, rng) / rate)
}

pub(crate) fn gamma_unit(shape: f64, rng: &mut RngStream) -> f64 {
    if shape < 1.0 {
        let boosted = marsaglia_tsang(shape + 1.0, rng);
        let log_draw = boosted.ln() + rng.uniform_open().ln() / shape;
        return log_draw.exp().max(f64::MIN_POSITIVE);
    }
    marsaglia_tsang(shape, rng)
}

fn marsaglia_tsang(shape: f64, rng: &mut RngStream) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.standard_normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform_open();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Index drawn with probability proportional to `weights[j]`.
pub fn sample_discrete(weights: &[f64], rng: &mut RngStream) -> Result<usize, StochasticError> {
    let mut total = 0.0;
    for (j, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w < 0.0 {
            return Err(StochasticError::InvalidWeights(format!(
                "weight {j} is {w}"
            )));
        }
        total += w;
    }
    if !(total > 0.0) {
        return Err(StochasticError::InvalidWeights(
            "all weights are zero".to_string(),
        ));
    }
    Ok(discrete_unchecked(weights, total, rng))
}

/// Inverse-CDF draw for weights already known to be valid with sum `total`.
pub(crate) fn discrete_unchecked(weights: &[f64], total: f64, rng: &mut RngStream) -> usize {
    let target = rng.uniform_open() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = j;
            if target < acc {
                return j;
            }
        }
    }
    // rounding left target >= acc
    last_positive
}

/// Inverse-Gaussian draw with density
/// `sqrt(shape / 2 pi) x^(-3/2) exp(-shape (x - mean)^2 / (2 mean^2 x))`.
///
/// Michael-Schucany-Haas transformation with rejection. The root is taken
/// in the form `mean / (1 + r + sqrt(r (r + 2)))`, which does not cancel
/// when `mean / shape` is large.
pub fn sample_inverse_gaussian(mean: f64, shape: f64, rng: &mut RngStream) -> Result<f64, StochasticError> {
    check_positive("inverse-gaussian", "mean", mean)?;
    check_positive("inverse-gaussian", "shape", shape)?;
    Ok(inverse_gaussian_unchecked(mean, shape, rng))
}

pub(crate) fn inverse_gaussian_unchecked(mean: f64, shape: f64, rng: &mut RngStream) -> f64 {
    let v = rng.standard_normal();
    let r = mean * v * v / (2.0 * shape);
    let x = mean / (1.0 + r + (r * (r + 2.0)).sqrt());
    if rng.uniform_open() * (mean + x) <= mean {
        x
    } else {
        mean * mean / x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(draws: &[f64]) -> (f64, f64) {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn exponential_means() {
        let mut rng = RngStream::new(1);
        let d: Vec<f64> = (0..1_000_000)
            .map(|_| sample_exponential(1.0, &mut rng).unwrap())
            .collect();
        assert!((moments(&d).0 - 1.0).abs() < 0.005);
        let d: Vec<f64> = (0..1_000_000)
            .map(|_| sample_exponential(4.0, &mut rng).unwrap())
            .collect();
        assert!((moments(&d).0 - 0.25).abs() < 0.002);
    }

    #[test]
    fn exponential_median_matches_cdf() {
        // P(X > ln2 / rate) = exp(-ln 2) = 1/2
        let mut rng = RngStream::new(2);
        let cut = std::f64::consts::LN_2 / 2.0;
        let above = (0..1_000_000)
            .filter(|_| sample_exponential(2.0, &mut rng).unwrap() > cut)
            .count();
        assert!((above as f64 / 1e6 - 0.5).abs() < 0.002);
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = RngStream::new(3);
        assert!(sample_exponential(0.0, &mut rng).is_err());
        assert!(sample_exponential(f64::NAN, &mut rng).is_err());
        assert!(sample_exponential(f64::INFINITY, &mut rng).is_err());
        assert!(sample_gamma(-1.0, 1.0, &mut rng).is_err());
        assert!(sample_gamma(1.0, 0.0, &mut rng).is_err());
        assert!(sample_inverse_gaussian(0.0, 1.0, &mut rng).is_err());
        assert!(sample_inverse_gaussian(1.0, -2.0, &mut rng).is_err());
        assert!(sample_discrete(&[0.0, 0.0], &mut rng).is_err());
        assert!(sample_discrete(&[1.0, -0.5], &mut rng).is_err());
        assert!(sample_discrete(&[1.0, f64::NAN], &mut rng).is_err());
        assert!(sample_discrete(&[], &mut rng).is_err());
    }

    #[test]
    fn gamma_moments() {
        let mut rng = RngStream::new(4);
        let d: Vec<f64> = (0..1_000_000)
            .map(|_| sample_gamma(3.0, 4.0, &mut rng).unwrap())
            .collect();
        let (m, v) = moments(&d);
        assert!((m - 0.75).abs() < 0.01, "mean {m}");
        assert!((v - 0.1875).abs() < 0.01, "var {v}");
    }

    #[test]
    fn gamma_small_shape() {
        let mut rng = RngStream::new(5);
        let d: Vec<f64> = (0..1_000_000)
            .map(|_| sample_gamma(0.3, 1.0, &mut rng).unwrap())
            .collect();
        let (m, v) = moments(&d);
        assert!((m - 0.3).abs() < 0.01, "mean {m}");
        // variance shape / rate^2 = 0.3, standard error of the variance is ~0.0025
        assert!((v - 0.3).abs() < 0.02, "var {v}");
        assert!(d.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn gamma_tiny_shape_stays_positive() {
        let mut rng = RngStream::new(6);
        for _ in 0..10_000 {
            let x = sample_gamma(1e-3, 1.0, &mut rng).unwrap();
            assert!(x > 0.0 && x.is_finite());
        }
    }

    #[test]
    fn discrete_cases() {
        let mut rng = RngStream::new(7);
        for _ in 0..1000 {
            assert_eq!(sample_discrete(&[0.0, 5.0, 0.0], &mut rng).unwrap(), 1);
        }
        let ones = (0..1_000_000)
            .filter(|_| sample_discrete(&[1.0, 3.0], &mut rng).unwrap() == 1)
            .count();
        assert!((ones as f64 / 1e6 - 0.75).abs() < 0.002);

        let n = 300_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_discrete(&[2.0, 2.0, 2.0], &mut rng).unwrap()] += 1;
        }
        let expected = n as f64 / 3.0;
        let sd = (n as f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn inverse_gaussian_moments() {
        let mut rng = RngStream::new(8);
        let d: Vec<f64> = (0..1_000_000)
            .map(|_| sample_inverse_gaussian(1.0, 1.0, &mut rng).unwrap())
            .collect();
        assert!((moments(&d).0 - 1.0).abs() < 0.01);

        let d: Vec<f64> = (0..1_000_000)
            .map(|_| sample_inverse_gaussian(2.0, 8.0, &mut rng).unwrap())
            .collect();
        let (m, v) = moments(&d);
        assert!((m - 2.0).abs() < 0.01);
        assert!((v - 1.0).abs() < 0.05, "var {v}");

        for _ in 0..100_000 {
            assert!(sample_inverse_gaussian(0.5, 3.0, &mut rng).unwrap() > 0.0);
        }
    }

    #[test]
    fn inverse_gaussian_extreme_ratio() {
        // mean / shape = 1e10: the naive root formula returns 0 or negative values here
        let mut rng = RngStream::new(9);
        for _ in 0..10_000 {
            let x = sample_inverse_gaussian(1e10, 1.0, &mut rng).unwrap();
            assert!(x > 0.0 && x.is_finite());
        }
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a: Vec<u64> = {
            let mut r = RngStream::new(42);
            (0..10_000).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = RngStream::new(42);
            (0..10_000).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        let c: Vec<u64> = {
            let mut r = RngStream::with_stream(42, 1);
            (0..10_000).map(|_| r.next_u64()).collect()
        };
        assert_ne!(a, c);
    }
}
