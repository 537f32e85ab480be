//! CSV ingestion, run configuration and model artifacts.

mod artifact;
mod config;

pub use artifact::{ModelArtifact, ModelParams, ARTIFACT_VERSION};
pub use config::{
    BenchmarkSection, DataSection, DatasetEntry, PathSection, PriorSection, RunConfig,
};

use std::fs::File;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::Chain;
use crate::model::{Dataset, ModelError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("cannot write {path}: {message}")]
    Write { path: PathBuf, message: String },
    #[error("column `{0}` not found in the header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse {value:?} as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row} has {found} fields, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("file has no data rows")]
    Empty,
    #[error("only one class ({0}) present; training needs at least two")]
    SingleClass(String),
    #[error("row {row}: label {label:?} was not seen in training")]
    UnknownLabel { row: usize, label: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-column affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Population standard deviation; constant columns keep 1.
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        if x.ncols() != self.mean.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} columns against a standardization of {}",
                x.ncols(),
                self.mean.len()
            )));
        }
        let mut out = x.to_owned();
        for (mut col, (m, s)) in out.columns_mut().into_iter().zip(self.mean.iter().zip(&self.scale)) {
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }
}

/// A parsed CSV: numeric covariates plus the raw label strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub covariate_names: Vec<String>,
    pub x: Array2<f64>,
    pub raw_labels: Option<Vec<String>>,
}

/// A training set with its label mapping and optional standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub covariate_names: Vec<String>,
    /// `label_names[k]` is the original label of class `k` (zero-based).
    pub label_names: Vec<String>,
    pub standardization: Option<Standardization>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvOptions {
    pub standardize: bool,
}

/// Reads a headed CSV. Every column except `label_column` must be numeric.
/// Row numbers in errors count data records from 1, header excluded.
pub fn read_table(path: &Path, label_column: Option<&str>) -> Result<Table, IoError> {
    let file = File::open(path).map_err(|e| IoError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    read_table_from(file, label_column).map_err(|e| match e {
        IoError::Read { message, .. } => IoError::Read {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn read_table_from<R: std::io::Read>(input: R, label_column: Option<&str>) -> Result<Table, IoError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(input);
    let read_err = |e: csv::Error| IoError::Read {
        path: PathBuf::new(),
        message: e.to_string(),
    };
    let header: Vec<String> = reader.headers().map_err(read_err)?.iter().map(str::to_string).collect();
    let label_index = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| IoError::MissingColumn(name.to_string()))?,
        ),
        None => None,
    };
    let covariate_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(c, _)| Some(c) != label_index)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(read_err)?;
        let row = r + 1;
        if record.len() != header.len() {
            return Err(IoError::Ragged {
                row,
                found: record.len(),
                expected: header.len(),
            });
        }
        for (c, field) in record.iter().enumerate() {
            if Some(c) == label_index {
                if field.is_empty() {
                    return Err(IoError::Parse {
                        row,
                        column: header[c].clone(),
                        value: String::new(),
                    });
                }
                labels.push(field.to_string());
                continue;
            }
            let v: f64 = field.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| IoError::Parse {
                row,
                column: header[c].clone(),
                value: field.to_string(),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(IoError::Empty);
    }
    let x = Array2::from_shape_vec((rows, covariate_names.len()), values).expect("row-major values");
    Ok(Table {
        covariate_names,
        x,
        raw_labels: label_index.map(|_| labels),
    })
}

/// Reads the named numeric columns, in the given order, ignoring any other
/// column. Used for prediction data, which may carry labels or ids.
pub fn read_covariates(path: &Path, names: &[String]) -> Result<Array2<f64>, IoError> {
    let file = File::open(path).map_err(|e| IoError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let read_err = |e: csv::Error| IoError::Read {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers().map_err(read_err)?.iter().map(str::to_string).collect();
    let columns = names
        .iter()
        .map(|n| header.iter().position(|h| h == n).ok_or_else(|| IoError::MissingColumn(n.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(read_err)?;
        let row = r + 1;
        if record.len() != header.len() {
            return Err(IoError::Ragged {
                row,
                found: record.len(),
                expected: header.len(),
            });
        }
        for &c in &columns {
            let field = &record[c];
            let v: f64 = field.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| IoError::Parse {
                row,
                column: header[c].clone(),
                value: field.to_string(),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(IoError::Empty);
    }
    Ok(Array2::from_shape_vec((rows, columns.len()), values).expect("row-major values"))
}

/// Loads a training set. Labels become classes in order of first
/// appearance.
pub fn load_csv(path: &Path, label_column: &str, options: &CsvOptions) -> Result<LoadedData, IoError> {
    let table = read_table(path, Some(label_column))?;
    labeled_data(table, None, options)
}

/// Builds a dataset from a table, mapping labels through `known` when given
/// (for evaluation data) or by first appearance otherwise.
pub fn labeled_data(table: Table, known: Option<&[String]>, options: &CsvOptions) -> Result<LoadedData, IoError> {
    let raw = table.raw_labels.ok_or_else(|| IoError::MissingColumn("label".into()))?;
    let mut names: Vec<String> = known.map(<[String]>::to_vec).unwrap_or_default();
    let mut labels = Vec::with_capacity(raw.len());
    for (r, label) in raw.iter().enumerate() {
        let k = match names.iter().position(|n| n == label) {
            Some(k) => k,
            None if known.is_some() => {
                return Err(IoError::UnknownLabel {
                    row: r + 1,
                    label: label.clone(),
                })
            }
            None => {
                names.push(label.clone());
                names.len() - 1
            }
        };
        labels.push(k);
    }
    let standardization = options.standardize.then(|| Standardization::fit(table.x.view()));
    let x = match &standardization {
        Some(s) => s.apply(table.x.view())?,
        None => table.x,
    };
    let dataset = Dataset::new(x, labels, names.len())?;
    Ok(LoadedData {
        dataset,
        covariate_names: table.covariate_names,
        label_names: names,
        standardization,
    })
}

/// Rejects data with fewer than two classes.
pub fn require_training_classes(data: &LoadedData) -> Result<(), IoError> {
    if data.label_names.len() < 2 {
        return Err(IoError::SingleClass(data.label_names.first().cloned().unwrap_or_default()));
    }
    Ok(())
}

/// Reads a chain written by [`Chain::write_csv`]. Coefficient columns must
/// be named `{name}_{k}_{j}`; a trailing non-coefficient column is taken as
/// the hyperparameter trace.
pub fn read_chain_csv(path: &Path) -> Result<Chain, IoError> {
    let table = read_table(path, None)?;
    let names = &table.covariate_names;
    if names.first().map(String::as_str) != Some("draw") {
        return Err(IoError::MissingColumn("draw".into()));
    }
    let mut coefficient_name = None;
    let (mut rows, mut cols, mut n_coef) = (0, 0, 0);
    for name in &names[1..] {
        let mut parts = name.rsplitn(3, '_');
        let (j, k, prefix) = (parts.next(), parts.next(), parts.next());
        let parsed = match (prefix, k.and_then(|k| k.parse::<usize>().ok()), j.and_then(|j| j.parse::<usize>().ok())) {
            (Some(p), Some(k), Some(j)) if k > 0 && j > 0 => Some((p, k, j)),
            _ => None,
        };
        match parsed {
            Some((p, k, j)) if coefficient_name.is_none_or(|c: &str| c == p) => {
                coefficient_name = Some(p);
                rows = rows.max(k);
                cols = cols.max(j);
                n_coef += 1;
            }
            _ => break,
        }
    }
    let coefficient_name = coefficient_name.ok_or_else(|| IoError::MissingColumn("coefficient columns".into()))?;
    if n_coef != rows * cols {
        return Err(IoError::Artifact(format!(
            "{n_coef} coefficient columns do not form a {rows} x {cols} matrix"
        )));
    }
    let extra = names.len() - 1 - n_coef;
    if extra > 1 {
        return Err(IoError::Artifact(format!("{extra} unrecognized trailing columns")));
    }
    let mut chain = Chain::new(coefficient_name, rows, cols, table.x.nrows());
    chain.draws = table.x.slice(ndarray::s![.., 1..1 + n_coef]).to_owned();
    chain.log_likelihood = vec![f64::NAN; table.x.nrows()];
    if extra == 1 {
        chain.hyper_name = Some(names[names.len() - 1].clone());
        chain.hyper = Some(table.x.column(names.len() - 1).to_vec());
    }
    Ok(chain)
}

/// Shortest round-trip text for `v`, switching to exponent form where the
/// plain form would be long.
pub fn format_float(v: f64) -> String {
    let plain = v.to_string();
    if plain.len() > 24 {
        format!("{v:e}")
    } else {
        plain
    }
}

pub(crate) fn write_err(path: &Path, e: impl std::fmt::Display) -> IoError {
    IoError::Write {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}
