//! Evaluation metrics: maximum transient swing plus MAX / RMSE / MEAN errors.

use std::fmt::Write as _;

use crate::dynamics::TimeSeries;
use crate::error::{Error, Result};

/// Maximum absolute displacement.
pub fn mts(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::domain("mts of an empty series"));
    }
    Ok(z.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorMetrics {
    pub max_err: f64,
    pub rmse: f64,
    pub mean_err: f64,
}

/// MAX, RMSE and MEAN of `measured - predicted`.
///
/// RMSE is the root of the mean squared error.
pub fn error_metrics(measured: &[f64], predicted: &[f64]) -> Result<ErrorMetrics> {
    if measured.len() != predicted.len() {
        return Err(Error::domain(format!(
            "length mismatch: {} measured vs {} predicted",
            measured.len(),
            predicted.len()
        )));
    }
    if measured.is_empty() {
        return Err(Error::domain("error metrics of empty inputs"));
    }
    let n = measured.len() as f64;
    let mut max_err = 0.0f64;
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (z, zh) in measured.iter().zip(predicted) {
        let d = z - zh;
        max_err = max_err.max(d.abs());
        sq += d * d;
        abs += d.abs();
    }
    Ok(ErrorMetrics { max_err, rmse: (sq / n).sqrt(), mean_err: abs / n })
}

/// All four metrics for one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub mts: f64,
    pub max_err: f64,
    pub rmse: f64,
    pub mean_err: f64,
    pub n: usize,
}

impl MetricReport {
    /// Per-sample comparison: `measured[i]` against the model's `predicted[i]`.
    pub fn from_samples(measured: &[f64], predicted: &[f64]) -> Result<Self> {
        let e = error_metrics(measured, predicted)?;
        Ok(Self { mts: mts(measured)?, max_err: e.max_err, rmse: e.rmse, mean_err: e.mean_err, n: measured.len() })
    }

    /// Sample-by-sample comparison of two traces of one motion.
    pub fn from_traces(measured: &TimeSeries, predicted: &TimeSeries) -> Result<Self> {
        if (measured.dt() - predicted.dt()).abs() > 1e-12 * measured.dt() {
            return Err(Error::domain("traces use different sample intervals"));
        }
        Self::from_samples(measured.values(), predicted.values())
    }

    pub const CSV_HEADER: &'static str = "model,max_mm,rmse_mm,mean_mm,mts_mm,n";

    pub fn csv_row(&self, model: &str) -> String {
        format!("{model},{:?},{:?},{:?},{:?},{}", self.max_err, self.rmse, self.mean_err, self.mts, self.n)
    }
}

/// Aligned text table in MAX, RMSE, MEAN column order.
pub fn render_table(rows: &[(&str, MetricReport)]) -> String {
    let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}  {:>10}  {:>10}", "model", "MAX", "RMSE", "MEAN", "MTS");
    for (model, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}",
            model, r.max_err, r.rmse, r.mean_err, r.mts
        );
    }
    out
}
