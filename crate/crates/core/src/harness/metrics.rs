use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub mse: f64,
}

/// Mean absolute and mean squared error over every entry.
pub fn metrics(predictions: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Metrics> {
    check_dim("prediction rows", truth.nrows(), predictions.nrows())?;
    check_dim("prediction cols", truth.ncols(), predictions.ncols())?;
    let count = truth.len() as f64;
    let (mut abs, mut sq) = (0.0, 0.0);
    for (p, t) in predictions.iter().zip(truth.iter()) {
        let e = p - t;
        abs += e.abs();
        sq += e * e;
    }
    Ok(Metrics {
        mae: abs / count,
        mse: sq / count,
    })
}

/// Number of positions where the labels differ.
pub fn misclassified(predicted: &[i64], truth: &[i64]) -> Result<usize> {
    check_dim("label count", truth.len(), predicted.len())?;
    Ok(predicted.iter().zip(truth).filter(|(a, b)| a != b).count())
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
