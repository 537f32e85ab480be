//! Stored MCMC draws shared by the Plackett-Luce and logit samplers.

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::io::format_float;

/// Draws of a `rows x cols` coefficient matrix, flattened row-major, one
/// stored draw per row of `draws`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    /// Column prefix in exports, `lambda` or `beta`.
    pub coefficient_name: String,
    pub rows: usize,
    pub cols: usize,
    pub draws: Array2<f64>,
    /// Scalar hyperparameter trace (`a` or `theta`) when it was sampled.
    pub hyper_name: Option<String>,
    pub hyper: Option<Vec<f64>>,
    pub log_likelihood: Vec<f64>,
    pub mh_accepted: usize,
    pub mh_proposed: usize,
}

impl Chain {
    pub fn new(coefficient_name: &str, rows: usize, cols: usize, capacity: usize) -> Self {
        Self {
            coefficient_name: coefficient_name.to_string(),
            rows,
            cols,
            draws: Array2::zeros((0, rows * cols)),
            hyper_name: None,
            hyper: None,
            log_likelihood: Vec::with_capacity(capacity),
            mh_accepted: 0,
            mh_proposed: 0,
        }
    }

    pub(crate) fn push(&mut self, coefficients: ArrayView2<f64>, log_likelihood: f64, hyper: Option<f64>) {
        let flat = coefficients
            .as_standard_layout()
            .into_shape_with_order(self.rows * self.cols)
            .expect("coefficient shape");
        self.draws.push_row(flat.view()).expect("draw width");
        self.log_likelihood.push(log_likelihood);
        if let Some(h) = hyper {
            self.hyper.get_or_insert_with(Vec::new).push(h);
        }
    }

    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    /// Draw `s` as a `rows x cols` matrix.
    pub fn draw(&self, s: usize) -> ArrayView2<'_, f64> {
        self.draws
            .row(s)
            .into_shape_with_order((self.rows, self.cols))
            .expect("contiguous draw")
    }

    /// Trace of one flattened coordinate.
    pub fn coordinate(&self, c: usize) -> ArrayView1<'_, f64> {
        self.draws.column(c)
    }

    /// Every draw divided by its own total mass.
    pub fn normalized_draws(&self) -> Array2<f64> {
        let mut out = self.draws.clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let total = row.sum();
            if total > 0.0 {
                row.mapv_inplace(|v| v / total);
            }
        }
        out
    }

    pub fn mh_acceptance_rate(&self) -> Option<f64> {
        (self.mh_proposed > 0).then(|| self.mh_accepted as f64 / self.mh_proposed as f64)
    }

    /// Column names: `draw`, then `{name}_{k}_{j}` (one-based, row-major),
    /// then the hyperparameter if it was sampled.
    pub fn csv_header(&self) -> Vec<String> {
        let mut header = vec!["draw".to_string()];
        for k in 0..self.rows {
            for j in 0..self.cols {
                header.push(format!("{}_{}_{}", self.coefficient_name, k + 1, j + 1));
            }
        }
        if let (Some(name), Some(_)) = (&self.hyper_name, &self.hyper) {
            header.push(name.clone());
        }
        header
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(self.csv_header())?;
        for (s, row) in self.draws.rows().into_iter().enumerate() {
            let mut record: Vec<String> = Vec::with_capacity(row.len() + 2);
            record.push((s + 1).to_string());
            record.extend(row.iter().map(|&v| format_float(v)));
            if let Some(h) = &self.hyper {
                record.push(format_float(h[s]));
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }
}
