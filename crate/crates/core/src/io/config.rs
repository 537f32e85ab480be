use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::diagnostics::{Method, PathEstimator};
use crate::em::EmConfig;
use crate::gibbs::GibbsConfig;
use crate::logit::LogitConfig;
use crate::model::FeatureMap;
use crate::variational::{TypeTwoConfig, VbConfig};

/// Settings for every command, read from TOML. Absent sections take their
/// defaults; unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: DataSection,
    pub prior: PriorSection,
    pub em: EmConfig,
    pub gibbs: GibbsConfig,
    pub vb: VbConfig,
    pub type2: TypeTwoConfig,
    pub logit: LogitConfig,
    pub regpath: PathSection,
    pub benchmark: BenchmarkSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub label: String,
    pub standardize: bool,
    /// Covariate pairs (zero-based) that get `exp(+-(x_j + x_l))` features.
    pub interactions: Vec<[usize; 2]>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            label: "class".into(),
            standardize: true,
            interactions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub a: f64,
    pub b: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    /// Strictly decreasing values of `a`.
    pub grid: Vec<f64>,
    pub estimator: PathEstimator,
}

impl Default for PathSection {
    fn default() -> Self {
        Self {
            grid: (1..=10).rev().map(|i| i as f64 / 10.0).collect(),
            estimator: PathEstimator::Map,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub datasets: Vec<DatasetEntry>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub train_fraction: f64,
    pub compute_ess: bool,
    pub parallel: bool,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        Self {
            datasets: Vec::new(),
            methods: vec![Method::PlGibbs, Method::SparseLogit],
            replications: 20,
            train_fraction: 2.0 / 3.0,
            compute_ess: true,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_label")]
    pub label: String,
}

fn default_label() -> String {
    "class".into()
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, IoError> {
        let config: Self = toml::from_str(text).map_err(|e| IoError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section against the preconditions of the module that
    /// consumes it.
    pub fn validate(&self) -> Result<(), IoError> {
        let cfg = |e: String| IoError::Config(e);
        let PriorSection { a, b } = self.prior;
        if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
            return Err(cfg(format!("prior a = {a}, b = {b} must be positive and finite")));
        }
        self.em.validate().map_err(|e| cfg(e.to_string()))?;
        self.gibbs.validate().map_err(|e| cfg(e.to_string()))?;
        self.logit.validate().map_err(|e| cfg(e.to_string()))?;
        if self.vb.max_iters == 0 || !(self.vb.rel_tol > 0.0) {
            return Err(cfg("vb.max_iters must be >= 1 and vb.rel_tol > 0".into()));
        }
        let t = &self.type2;
        if !(t.a_lo > 0.0 && t.a_lo <= t.a_hi && t.a_hi.is_finite() && t.tol > 0.0) {
            return Err(cfg(format!("type2 interval [{}, {}] or tol {} invalid", t.a_lo, t.a_hi, t.tol)));
        }
        crate::diagnostics::check_grid(&self.regpath.grid).map_err(|e| cfg(e.to_string()))?;
        let bench = &self.benchmark;
        if bench.replications == 0 {
            return Err(cfg("benchmark.replications must be at least 1".into()));
        }
        if !(bench.train_fraction > 0.0 && bench.train_fraction < 1.0) {
            return Err(cfg(format!("benchmark.train_fraction = {} must lie in (0, 1)", bench.train_fraction)));
        }
        for pair in &self.data.interactions {
            if pair[0] == pair[1] {
                return Err(cfg(format!("interaction pair {pair:?} repeats a covariate")));
            }
        }
        Ok(())
    }

    /// Default map for `d` covariates plus the configured interactions.
    pub fn feature_map(&self, d: usize) -> Result<FeatureMap, IoError> {
        let mut map = FeatureMap::default_for(d);
        for &[first, second] in &self.data.interactions {
            map = map.with_interaction(first, second);
        }
        map.validate(d)?;
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let config = RunConfig::default();
        let text = config.to_toml_string();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), config);
    }

    #[test]
    fn partial_sections() {
        let config = RunConfig::from_toml_str(
            "seed = 4\n[prior]\na = 0.5\n[gibbs]\nburn_in = 10\nsamples = 20\n[data]\ninteractions = [[0, 1]]\n",
        )
        .unwrap();
        assert_eq!(config.seed, Some(4));
        assert_eq!(config.prior, PriorSection { a: 0.5, b: 1.0 });
        assert_eq!(config.gibbs.burn_in, 10);
        assert_eq!(config.gibbs.thin, 1);
        assert_eq!(config.feature_map(2).unwrap().len(), 7);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::from_toml_str("[prior]\nalpha = 1\n").is_err());
        assert!(RunConfig::from_toml_str("bogus = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[prior]\na = -1\n").is_err());
        assert!(RunConfig::from_toml_str("[regpath]\ngrid = [0.1, 0.5]\n").is_err());
        assert!(RunConfig::from_toml_str("[logit]\nhyper_c = 0\n").is_err());
        assert!(RunConfig::from_toml_str("[benchmark]\ntrain_fraction = 1.5\n").is_err());
    }
}
