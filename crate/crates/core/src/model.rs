//! Data representation and the Plackett-Luce likelihood.
//!
//! Class `k` for an observation with transformed features `W` has
//! probability `W.lambda_k / sum_l W.lambda_l`, where `lambda` is a
//! non-negative `K x p` weight matrix. Labels are zero-based inside the
//! library; the I/O layer converts from the one-based labels users see.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stochastic::RngStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("covariate matrix has a non-finite entry at observation {row}, covariate {column}")]
    NonFiniteCovariate { row: usize, column: usize },
    #[error("label {label} at observation {row} is outside 0..{n_classes}")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(
        "transform {transform} of covariate {covariate} gives {value} (not strictly positive and finite); standardize the covariates"
    )]
    TransformOverflow {
        transform: usize,
        covariate: usize,
        value: f64,
    },
    #[error("transform {transform} references covariate {covariate} but the data has {d} covariates")]
    InvalidTransform {
        transform: usize,
        covariate: usize,
        d: usize,
    },
    #[error("feature W[{row}][{column}] = {value} is not strictly positive and finite")]
    InvalidFeature { row: usize, column: usize, value: f64 },
    #[error("all class scores are zero")]
    DegenerateWeights,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("need at least one draw")]
    NoDraws,
}

/// Observed covariates and zero-based class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(x: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self, ModelError> {
        if x.nrows() != labels.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} covariate rows but {} labels",
                x.nrows(),
                labels.len()
            )));
        }
        if n_classes == 0 {
            return Err(ModelError::ShapeMismatch("zero classes".into()));
        }
        for ((row, column), v) in x.indexed_iter() {
            if !v.is_finite() {
                return Err(ModelError::NonFiniteCovariate { row, column });
            }
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= n_classes {
                return Err(ModelError::LabelOutOfRange {
                    row,
                    label,
                    n_classes,
                });
            }
        }
        Ok(Self {
            x,
            labels,
            n_classes,
        })
    }

    /// Builds a dataset from labels in `1..=n_classes`.
    pub fn from_one_based(x: Array2<f64>, labels: &[usize], n_classes: usize) -> Result<Self, ModelError> {
        let mut zero_based = Vec::with_capacity(labels.len());
        for (row, &l) in labels.iter().enumerate() {
            if l == 0 || l > n_classes {
                return Err(ModelError::LabelOutOfRange {
                    row,
                    label: l,
                    n_classes,
                });
            }
            zero_based.push(l - 1);
        }
        Self::new(x, zero_based, n_classes)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
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

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.n_classes)
    }

    /// Classes with no observations. They are legal but worth reporting.
    pub fn empty_classes(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(k, _)| k)
            .collect()
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }
}

fn class_counts(labels: &[usize], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// One coordinate of the feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transform {
    /// exp(x_j)
    PositiveExp { covariate: usize },
    /// exp(-x_j)
    NegativeExp { covariate: usize },
    /// constant 1
    Offset,
    /// exp(x_j + x_l), or exp(-(x_j + x_l)) when `negate`
    Interaction {
        first: usize,
        second: usize,
        negate: bool,
    },
}

impl Transform {
    fn apply(&self, row: ArrayView1<f64>) -> f64 {
        match *self {
            Transform::PositiveExp { covariate } => row[covariate].exp(),
            Transform::NegativeExp { covariate } => (-row[covariate]).exp(),
            Transform::Offset => 1.0,
            Transform::Interaction {
                first,
                second,
                negate,
            } => {
                let s = row[first] + row[second];
                if negate {
                    (-s).exp()
                } else {
                    s.exp()
                }
            }
        }
    }

    fn covariates(&self) -> impl Iterator<Item = usize> {
        let (a, b) = match *self {
            Transform::PositiveExp { covariate } | Transform::NegativeExp { covariate } => {
                (Some(covariate), None)
            }
            Transform::Offset => (None, None),
            Transform::Interaction { first, second, .. } => (Some(first), Some(second)),
        };
        a.into_iter().chain(b)
    }

    /// Covariate blamed when the transform leaves the positive reals.
    fn primary_covariate(&self) -> usize {
        self.covariates().next().unwrap_or(0)
    }
}

/// Ordered list of transforms mapping covariates `X` to features `W`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMap {
    transforms: Vec<Transform>,
}

impl FeatureMap {
    pub fn new(transforms: Vec<Transform>) -> Self {
        Self { transforms }
    }

    /// `[exp(x_1) .. exp(x_d), exp(-x_1) .. exp(-x_d), 1]`, so `p = 2d + 1`.
    pub fn default_for(d: usize) -> Self {
        let mut transforms = Vec::with_capacity(2 * d + 1);
        transforms.extend((0..d).map(|covariate| Transform::PositiveExp { covariate }));
        transforms.extend((0..d).map(|covariate| Transform::NegativeExp { covariate }));
        transforms.push(Transform::Offset);
        Self { transforms }
    }

    /// Appends `exp(x_j + x_l)` and `exp(-(x_j + x_l))`.
    pub fn with_interaction(mut self, first: usize, second: usize) -> Self {
        self.transforms.push(Transform::Interaction {
            first,
            second,
            negate: false,
        });
        self.transforms.push(Transform::Interaction {
            first,
            second,
            negate: true,
        });
        self
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn validate(&self, d: usize) -> Result<(), ModelError> {
        if self.transforms.is_empty() {
            return Err(ModelError::ShapeMismatch("feature map is empty".into()));
        }
        for (t, tr) in self.transforms.iter().enumerate() {
            if let Some(covariate) = tr.covariates().find(|&c| c >= d) {
                return Err(ModelError::InvalidTransform {
                    transform: t,
                    covariate,
                    d,
                });
            }
        }
        Ok(())
    }

    /// Transformed feature vector of one covariate row.
    pub fn transform(&self, row: ArrayView1<f64>) -> Result<Array1<f64>, ModelError> {
        self.validate(row.len())?;
        let mut w = Array1::zeros(self.len());
        self.fill(row, w.view_mut().into_slice().expect("contiguous"))?;
        Ok(w)
    }

    fn fill(&self, row: ArrayView1<f64>, out: &mut [f64]) -> Result<(), ModelError> {
        for (t, (tr, slot)) in self.transforms.iter().zip(out.iter_mut()).enumerate() {
            let value = tr.apply(row);
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::TransformOverflow {
                    transform: t,
                    covariate: tr.primary_covariate(),
                    value,
                });
            }
            *slot = value;
        }
        Ok(())
    }

    /// `n x p` feature matrix for every row of `x`.
    pub fn transform_matrix(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, ModelError> {
        self.validate(x.ncols())?;
        let mut w = Array2::zeros((x.nrows(), self.len()));
        for (row, mut out) in x.rows().into_iter().zip(w.rows_mut()) {
            self.fill(row, out.as_slice_mut().expect("row-major"))?;
        }
        Ok(w)
    }

    pub fn design(&self, data: &Dataset) -> Result<Design, ModelError> {
        let w = self.transform_matrix(data.x())?;
        Design::new(w, data.labels().to_vec(), data.n_classes())
    }
}

/// Transformed features `W` (n x p, strictly positive) with labels; the
/// input every inference routine works on.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    w: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Design {
    pub fn new(w: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self, ModelError> {
        if w.nrows() != labels.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                w.nrows(),
                labels.len()
            )));
        }
        if w.ncols() == 0 || n_classes == 0 {
            return Err(ModelError::ShapeMismatch("empty feature or class set".into()));
        }
        for ((row, column), &v) in w.indexed_iter() {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidFeature { row, column, value: v });
            }
        }
        for (row, &label) in labels.iter().enumerate() {
            if label >= n_classes {
                return Err(ModelError::LabelOutOfRange {
                    row,
                    label,
                    n_classes,
                });
            }
        }
        let w = if w.is_standard_layout() {
            w
        } else {
            w.as_standard_layout().to_owned()
        };
        Ok(Self {
            w,
            labels,
            n_classes,
        })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn w(&self) -> ArrayView2<'_, f64> {
        self.w.view()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.w.as_slice().expect("standard layout")[i * p..(i + 1) * p]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels, self.n_classes)
    }
}

/// Non-negative `K x p` weights with the Gamma prior's shape `a` and rate `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PLWeights {
    pub lambda: Array2<f64>,
    pub hyper_a: f64,
    pub hyper_b: f64,
}

impl PLWeights {
    pub fn new(lambda: Array2<f64>, hyper_a: f64, hyper_b: f64) -> Result<Self, ModelError> {
        check_lambda(lambda.view())?;
        if !(hyper_a > 0.0 && hyper_a.is_finite()) {
            return Err(ModelError::InvalidWeights(format!("shape a = {hyper_a}")));
        }
        if !(hyper_b >= 0.0 && hyper_b.is_finite()) {
            return Err(ModelError::InvalidWeights(format!("rate b = {hyper_b}")));
        }
        Ok(Self {
            lambda,
            hyper_a,
            hyper_b,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.lambda.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.lambda.ncols()
    }

    /// Total mass `sum_kj lambda_kj`.
    pub fn total_mass(&self) -> f64 {
        self.lambda.sum()
    }

    /// `lambda / total_mass`; the all-zero matrix is returned unchanged.
    pub fn normalized(&self) -> Array2<f64> {
        normalize(self.lambda.view())
    }

    pub fn class_probabilities(&self, w: &[f64]) -> Result<Vec<f64>, ModelError> {
        class_probabilities(w, self.lambda.view())
    }

    /// Entries that are exactly zero, as `(k, j)` pairs.
    pub fn zero_pattern(&self) -> Vec<(usize, usize)> {
        zero_pattern(self.lambda.view())
    }
}

pub fn normalize(lambda: ArrayView2<f64>) -> Array2<f64> {
    let total = lambda.sum();
    if total > 0.0 {
        lambda.mapv(|v| v / total)
    } else {
        lambda.to_owned()
    }
}

pub fn zero_pattern(lambda: ArrayView2<f64>) -> Vec<(usize, usize)> {
    lambda
        .indexed_iter()
        .filter(|(_, &v)| v == 0.0)
        .map(|(ix, _)| ix)
        .collect()
}

pub(crate) fn check_lambda(lambda: ArrayView2<f64>) -> Result<(), ModelError> {
    for ((k, j), &v) in lambda.indexed_iter() {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(ModelError::InvalidWeights(format!(
                "lambda[{k}][{j}] = {v}"
            )));
        }
    }
    Ok(())
}

fn check_shapes(w: &[f64], lambda: ArrayView2<f64>) -> Result<(), ModelError> {
    if w.len() != lambda.ncols() {
        return Err(ModelError::ShapeMismatch(format!(
            "feature vector has {} entries, weights have {} columns",
            w.len(),
            lambda.ncols()
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Class probabilities `W.lambda_k / sum_l W.lambda_l`.
pub fn class_probabilities(w: &[f64], lambda: ArrayView2<f64>) -> Result<Vec<f64>, ModelError> {
    check_shapes(w, lambda)?;
    let scores: Vec<f64> = lambda.rows().into_iter().map(|row| dot(w, row)).collect();
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(ModelError::DegenerateWeights);
    }
    Ok(scores.into_iter().map(|s| s / total).collect())
}

/// Empirical winner frequencies of the exponential race.
///
/// Competitor `(k, j)` arrives at `V_kj ~ Exp(W_j lambda_kj)`; the class of
/// the first arrival wins. Competitors with zero rate never arrive. This
/// simulates every arrival time individually and shares no code with
/// [`class_probabilities`], so it serves as an independent check of it.
/// Draws are split over rayon workers with streams forked from `rng`.
pub fn race_oracle(
    w: &[f64],
    lambda: ArrayView2<f64>,
    draws: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>, ModelError> {
    check_shapes(w, lambda)?;
    check_lambda(lambda)?;
    if draws == 0 {
        return Err(ModelError::NoDraws);
    }
    let n_classes = lambda.nrows();
    let rates: Vec<(usize, f64)> = lambda
        .indexed_iter()
        .map(|((k, j), &l)| (k, w[j] * l))
        .filter(|&(_, r)| r > 0.0)
        .collect();
    if rates.is_empty() {
        return Err(ModelError::DegenerateWeights);
    }

    const CHUNK: usize = 1 << 16;
    let n_chunks = draws.div_ceil(CHUNK);
    let streams: Vec<RngStream> = (0..n_chunks as u64).map(|c| rng.fork(c)).collect();
    let counts = streams
        .into_par_iter()
        .enumerate()
        .map(|(c, mut stream)| {
            let todo = CHUNK.min(draws - c * CHUNK);
            let mut counts = vec![0u64; n_classes];
            for _ in 0..todo {
                let mut best = f64::INFINITY;
                let mut winner = 0;
                for &(k, rate) in &rates {
                    let v = -stream.uniform_open().ln() / rate;
                    if v < best {
                        best = v;
                        winner = k;
                    }
                }
                counts[winner] += 1;
            }
            counts
        })
        .reduce(
            || vec![0u64; n_classes],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(counts.into_iter().map(|c| c as f64 / draws as f64).collect())
}

/// Admixture weights `pi_j = W_j sum_k lambda_kj / W.sum_l lambda_l`.
pub fn mixture_weights(w: &[f64], lambda: ArrayView2<f64>) -> Result<Vec<f64>, ModelError> {
    check_shapes(w, lambda)?;
    let column_mass = lambda.sum_axis(Axis(0));
    let unnorm: Vec<f64> = w.iter().zip(column_mass.iter()).map(|(a, b)| a * b).collect();
    let total: f64 = unnorm.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(ModelError::DegenerateWeights);
    }
    Ok(unnorm.into_iter().map(|v| v / total).collect())
}

/// Latent feature indicators `C` and first-arrival times `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub components: Vec<usize>,
    pub arrivals: Vec<f64>,
}

impl AugmentedState {
    /// `n_kj = #{i : Y_i = k, C_i = j}`.
    pub fn counts(&self, design: &Design) -> Array2<f64> {
        let mut counts = Array2::zeros((design.n_classes(), design.p()));
        for (&k, &j) in design.labels().iter().zip(&self.components) {
            counts[[k, j]] += 1.0;
        }
        counts
    }
}

/// Complete-data log-likelihood
/// `sum_kj { n_kj ln lambda_kj - lambda_kj sum_i Z_i W_ij } + sum_i ln W_{i,C_i}`.
///
/// Terms with `n_kj = 0` contribute nothing from the log part even when
/// `lambda_kj = 0`. A positive count on a zero weight returns negative
/// infinity.
pub fn log_complete_likelihood(
    design: &Design,
    lambda: ArrayView2<f64>,
    aug: &AugmentedState,
) -> Result<f64, ModelError> {
    if lambda.dim() != (design.n_classes(), design.p()) {
        return Err(ModelError::ShapeMismatch(format!(
            "weights {:?} for design with K={} p={}",
            lambda.dim(),
            design.n_classes(),
            design.p()
        )));
    }
    if aug.components.len() != design.n() || aug.arrivals.len() != design.n() {
        return Err(ModelError::ShapeMismatch("augmented state length".into()));
    }
    if let Some(&j) = aug.components.iter().find(|&&j| j >= design.p()) {
        return Err(ModelError::ShapeMismatch(format!("component {j} out of range")));
    }
    let counts = aug.counts(design);
    let mut exposure = vec![0.0; design.p()];
    for (i, &z) in aug.arrivals.iter().enumerate() {
        for (e, &wij) in exposure.iter_mut().zip(design.row(i)) {
            *e += z * wij;
        }
    }
    let mut total = 0.0;
    for ((k, j), &l) in lambda.indexed_iter() {
        let n = counts[[k, j]];
        if n > 0.0 {
            if l == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += n * l.ln();
        }
        total -= l * exposure[j];
    }
    for (i, &j) in aug.components.iter().enumerate() {
        total += design.row(i)[j].ln();
    }
    Ok(total)
}

/// Observed-data log-likelihood `sum_i ln P(Y_i | W_i, lambda)`.
///
/// Returns negative infinity if some observation has zero probability.
pub fn log_likelihood(design: &Design, lambda: ArrayView2<f64>) -> f64 {
    let column_mass = lambda.sum_axis(Axis(0));
    let mut total = 0.0;
    for (i, &y) in design.labels().iter().enumerate() {
        let w = design.row(i);
        let own = dot(w, lambda.row(y));
        let all = dot(w, column_mass.view());
        total += own.ln() - all.ln();
    }
    total
}
