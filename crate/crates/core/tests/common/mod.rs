#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array2, ArrayView2};
use plreg::io::{self, CsvOptions, LoadedData};
use plreg::Design;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn load(name: &str, label: &str, standardize: bool) -> LoadedData {
    io::load_csv(&data_path(name), label, &CsvOptions { standardize }).expect("bundled dataset")
}

/// Gauss-Legendre nodes and weights on [0, 1], by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let step = p1 / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Likelihood of the labels written out directly from the class scores.
pub fn direct_likelihood(w: ArrayView2<f64>, labels: &[usize], lambda: ArrayView2<f64>) -> f64 {
    let mut l = 1.0;
    for (i, &y) in labels.iter().enumerate() {
        let scores: Vec<f64> = (0..lambda.nrows())
            .map(|k| (0..w.ncols()).map(|j| w[[i, j]] * lambda[[k, j]]).sum())
            .collect();
        l *= scores[y] / scores.iter().sum::<f64>();
    }
    l
}

/// Exact results for a symmetric Gamma(a, b) prior with `K p = m` weights.
/// The likelihood depends on `lambda` only through `lambda / Lambda`, which
/// is Dirichlet(a, .., a) a priori, so evidence and posterior means of the
/// normalized weights are integrals over the simplex. The simplex is
/// parameterized by stick-breaking over the unit cube.
pub struct SimplexQuadrature {
    pub log_evidence: f64,
    /// Posterior mean of `lambda / Lambda`, row-major.
    pub mean: Vec<f64>,
}

pub fn simplex_quadrature(design: &Design, a: f64, nodes: usize) -> SimplexQuadrature {
    let (k, p) = (design.n_classes(), design.p());
    let m = k * p;
    let (x, wq) = gauss_legendre(nodes);
    let log_norm = ln_gamma(m as f64 * a) - m as f64 * ln_gamma(a);
    let mut idx = vec![0usize; m - 1];
    let mut z = 0.0;
    let mut moments = vec![0.0; m];
    let mut lambda = Array2::zeros((k, p));
    loop {
        let mut rest = 1.0;
        let mut jac = 1.0;
        let mut weight = 1.0;
        let mut flat = vec![0.0; m];
        for (d, &i) in idx.iter().enumerate() {
            let u = x[i];
            flat[d] = rest * u;
            jac *= rest;
            rest *= 1.0 - u;
            weight *= wq[i];
        }
        flat[m - 1] = rest;
        let log_prior = log_norm + flat.iter().map(|v| (a - 1.0) * v.ln()).sum::<f64>();
        for (slot, v) in lambda.iter_mut().zip(&flat) {
            *slot = *v;
        }
        let f = weight * jac * log_prior.exp() * direct_likelihood(design.w(), design.labels(), lambda.view());
        z += f;
        for (mm, v) in moments.iter_mut().zip(&flat) {
            *mm += f * v;
        }
        let mut d = 0;
        loop {
            if d == m - 1 {
                return SimplexQuadrature {
                    log_evidence: z.ln(),
                    mean: moments.iter().map(|v| v / z).collect(),
                };
            }
            idx[d] += 1;
            if idx[d] < nodes {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
