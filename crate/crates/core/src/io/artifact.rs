use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{write_err, IoError, Standardization};
use crate::chain::Chain;
use crate::error::Error;
use crate::gibbs;
use crate::logit;
use crate::model::{self, FeatureMap, ModelError};
use crate::variational::{PredictionMode, VariationalState};

pub const ARTIFACT_VERSION: u32 = 1;

/// A fitted model with everything prediction needs: preprocessing, the
/// label mapping and the method's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub library_version: String,
    pub covariate_names: Vec<String>,
    pub label_names: Vec<String>,
    /// Applied to raw covariates before anything else.
    pub standardization: Option<Standardization>,
    /// Plackett-Luce feature map; unused by the logit baseline.
    pub feature_map: Option<FeatureMap>,
    pub seed: Option<u64>,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelParams {
    /// MAP weights stored as `lambda / Lambda` and `Lambda`.
    Em {
        hyper_a: f64,
        hyper_b: f64,
        normalized: Array2<f64>,
        total_mass: f64,
        zero_pattern: Vec<(usize, usize)>,
        objective: Vec<f64>,
    },
    Gibbs {
        hyper_a: f64,
        hyper_b: f64,
        chain: Chain,
    },
    Variational {
        hyper_a: f64,
        hyper_b: f64,
        shape: Array2<f64>,
        rate: Array2<f64>,
        prediction: PredictionMode,
        elbo: Vec<f64>,
    },
    Logit {
        intercept: bool,
        hyper_c: f64,
        hyper_d: f64,
        chain: Chain,
    },
}

impl ModelArtifact {
    pub fn new(
        covariate_names: Vec<String>,
        label_names: Vec<String>,
        standardization: Option<Standardization>,
        feature_map: Option<FeatureMap>,
        seed: Option<u64>,
        params: ModelParams,
    ) -> Self {
        Self {
            format_version: ARTIFACT_VERSION,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            covariate_names,
            label_names,
            standardization,
            feature_map,
            seed,
            params,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let file = File::create(path).map_err(|e| write_err(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(file), self).map_err(|e| write_err(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        let artifact: Self = serde_json::from_str(text).map_err(|e| IoError::Artifact(e.to_string()))?;
        artifact.check()?;
        Ok(artifact)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let file = File::open(path).map_err(|e| IoError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let artifact: Self =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| IoError::Artifact(e.to_string()))?;
        artifact.check()?;
        Ok(artifact)
    }

    fn check(&self) -> Result<(), IoError> {
        if self.format_version != ARTIFACT_VERSION {
            return Err(IoError::Artifact(format!(
                "format version {} is not supported (expected {ARTIFACT_VERSION})",
                self.format_version
            )));
        }
        let needs_map = !matches!(self.params, ModelParams::Logit { .. });
        if needs_map && self.feature_map.is_none() {
            return Err(IoError::Artifact("Plackett-Luce model without a feature map".into()));
        }
        Ok(())
    }

    /// Class probabilities (`n x K`) for raw covariate rows.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, Error> {
        if x.ncols() != self.covariate_names.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} covariates given, model expects {}",
                x.ncols(),
                self.covariate_names.len()
            ))
            .into());
        }
        let x = match &self.standardization {
            Some(s) => s.apply(x)?,
            None => x.to_owned(),
        };
        let k = self.n_classes();
        let mut out = Array2::zeros((x.nrows(), k));
        if let ModelParams::Logit { intercept, chain, .. } = &self.params {
            for (row, mut target) in x.rows().into_iter().zip(out.rows_mut()) {
                let mut z = row.to_vec();
                if *intercept {
                    z.push(1.0);
                }
                let p = logit::logit_predict(chain, ndarray::aview1(&z))?;
                target.assign(&ndarray::aview1(&p));
            }
            return Ok(out);
        }

        let map = self.feature_map.as_ref().expect("checked on load");
        let w = map.transform_matrix(x.view())?;
        let vb_state = match &self.params {
            ModelParams::Variational { shape, rate, .. } => Some(VariationalState {
                rho: Array2::zeros((0, shape.ncols())),
                shape: shape.clone(),
                rate: rate.clone(),
                z_mean: Vec::new(),
                elbo_trace: Vec::new(),
                iterations: 0,
                converged: true,
            }),
            _ => None,
        };
        for (i, mut target) in out.rows_mut().into_iter().enumerate() {
            let wi = w.row(i);
            let wi = wi.as_slice().expect("row-major");
            let p = match &self.params {
                ModelParams::Em { normalized, .. } => model::class_probabilities(wi, normalized.view())?,
                ModelParams::Gibbs { chain, .. } => gibbs::posterior_predict(chain, wi)?,
                ModelParams::Variational { prediction, .. } => {
                    vb_state.as_ref().expect("variational").predict(wi, *prediction)?
                }
                ModelParams::Logit { .. } => unreachable!(),
            };
            target.assign(&ndarray::aview1(&p));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn json_round_trip_predicts_identically() {
        let artifact = ModelArtifact::new(
            vec!["x".into()],
            vec!["a".into(), "b".into()],
            Some(Standardization {
                mean: vec![0.3],
                scale: vec![1.7],
            }),
            Some(FeatureMap::default_for(1)),
            Some(9),
            ModelParams::Em {
                hyper_a: 1.0,
                hyper_b: 1.0,
                normalized: array![[0.1, 0.2, 0.05], [0.3, 0.15, 0.2]],
                total_mass: 3.0,
                zero_pattern: vec![],
                objective: vec![-3.0, -2.5],
            },
        );
        let x = array![[0.1], [-2.0], [3.3]];
        let before = artifact.predict(x.view()).unwrap();
        let back = ModelArtifact::from_json(&artifact.to_json()).unwrap();
        assert_eq!(back, artifact);
        assert_eq!(back.predict(x.view()).unwrap(), before);
    }

    #[test]
    fn rejects_other_versions() {
        let mut artifact = ModelArtifact::new(
            vec![],
            vec![],
            None,
            None,
            None,
            ModelParams::Logit {
                intercept: true,
                hyper_c: 1.0,
                hyper_d: 1.0,
                chain: Chain::new("beta", 1, 1, 0),
            },
        );
        artifact.format_version = 99;
        assert!(ModelArtifact::from_json(&artifact.to_json()).is_err());
    }
}
