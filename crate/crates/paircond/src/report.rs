//! Scan tables and least-squares power-law fits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::pairing::linear_fit;

/// `y ≈ prefactor · x^exponent`, fitted in log-log space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub rms_residual: f64,
    /// Set when the data do not support a power law (log rms above 0.2 or a
    /// constant observable).
    pub refused: bool,
}

pub const REFUSAL_RMS: f64 = 0.2;

pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    if x.len() != y.len() {
        return usage("fit needs equally many controls and observables");
    }
    if x.len() < 3 {
        return usage("fit needs at least three rows");
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return usage("log-log fit needs positive finite values");
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    if lx.iter().all(|v| (v - mx).abs() <= 1e-14 * mx.abs().max(1.0)) {
        return Err(Error::Fit("control variable has zero variance".into()));
    }
    let (a, b, rms) = linear_fit(&lx, &ly);
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let constant = ly.iter().all(|v| (v - my).abs() <= 1e-12 * my.abs().max(1.0));
    Ok(PowerLawFit {
        exponent: a,
        prefactor: b.exp(),
        rms_residual: rms,
        refused: constant || rms > REFUSAL_RMS,
    })
}

/// Table of scan rows plus named fits. Rows are kept sorted by the first
/// column.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub fits: BTreeMap<String, PowerLawFit>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl ScanReport {
    pub fn new(columns: &[&str]) -> Self {
        ScanReport {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn sort(&mut self) {
        self.rows
            .sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap_or(std::cmp::Ordering::Equal));
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Fits column `y` against column `x` over rows where both are positive;
    /// records it under `name` when the fit is possible.
    pub fn fit_columns(&mut self, name: &str, x: &str, y: &str) -> Option<PowerLawFit> {
        let (xs, ys) = (self.column(x)?, self.column(y)?);
        let (px, py): (Vec<f64>, Vec<f64>) = xs
            .into_iter()
            .zip(ys)
            .filter(|(a, b)| *a > 0.0 && *b > 0.0)
            .unzip();
        let fit = fit_power_law(&px, &py).ok()?;
        self.fits.insert(name.to_string(), fit.clone());
        Some(fit)
    }
}
