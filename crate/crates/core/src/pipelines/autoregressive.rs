use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::model::{ModelState, Posterior, PredictiveGaussian};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    /// τ, the number of past time steps in each input window.
    pub window: usize,
    pub horizon: usize,
    /// Feed predictive variances back into the window; `false` is the naive
    /// mode where every slot is treated as exact.
    pub propagate_uncertainty: bool,
    /// Include observation noise in the reported (and propagated) variances.
    #[serde(default = "default_true")]
    pub include_noise: bool,
}

fn default_true() -> bool {
    true
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::InvalidParameter("forecast window must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("forecast horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Input/output pairs from a T×D series: row i of X̂ stacks y_i … y_{i+τ−1}
/// (time-major, each y a full D-vector) and row i of Ŷ is y_{i+τ}.
pub fn autoregressive_reformat(series: &DMatrix<f64>, tau: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (t, d) = (series.nrows(), series.ncols());
    if tau == 0 {
        return Err(Error::InvalidParameter("window must be at least 1".into()));
    }
    if t <= tau {
        return Err(Error::InvalidParameter(format!(
            "series of length {t} is too short for window {tau}"
        )));
    }
    let rows = t - tau;
    let x = DMatrix::from_fn(rows, tau * d, |i, j| series[(i + j / d, j % d)]);
    let y = series.rows(tau, rows).into_owned();
    Ok((x, y))
}

/// Free simulation from `seed_window` (τ·D values, oldest first).
pub fn iterative_forecast(
    state: &ModelState,
    seed_window: &[f64],
    config: &ForecastConfig,
) -> Result<Vec<PredictiveGaussian>> {
    forecast_with_posterior(&Posterior::new(state)?, seed_window, config, |_, _, _| {})
}

/// [`iterative_forecast`] with a hook that sees the window (means,
/// variances) fed to the predictor at every step.
pub fn iterative_forecast_recorded(
    state: &ModelState,
    seed_window: &[f64],
    config: &ForecastConfig,
    recorder: impl FnMut(usize, &[f64], &[f64]),
) -> Result<Vec<PredictiveGaussian>> {
    forecast_with_posterior(&Posterior::new(state)?, seed_window, config, recorder)
}

pub fn forecast_with_posterior(
    posterior: &Posterior,
    seed_window: &[f64],
    config: &ForecastConfig,
    mut recorder: impl FnMut(usize, &[f64], &[f64]),
) -> Result<Vec<PredictiveGaussian>> {
    config.validate()?;
    let d = posterior.d();
    check_dim("forecast window", config.window * d, seed_window.len())?;
    check_dim("model input dimension", posterior.q(), seed_window.len())?;
    let mut means = seed_window.to_vec();
    let mut vars = vec![0.0; means.len()];
    let mut out = Vec::with_capacity(config.horizon);
    for step in 0..config.horizon {
        recorder(step, &means, &vars);
        let pred = posterior.uncertain(&means, &vars, config.include_noise)?;
        means.drain(..d);
        vars.drain(..d);
        means.extend_from_slice(&pred.mean);
        if config.propagate_uncertainty {
            vars.extend_from_slice(&pred.variance);
        } else {
            vars.extend(std::iter::repeat(0.0).take(d));
        }
        out.push(pred);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reformat_examples() {
        let y = DMatrix::from_column_slice(5, 1, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let (x, t) = autoregressive_reformat(&y, 2).unwrap();
        assert_eq!(x, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 3.0, 3.0, 4.0]));
        assert_eq!(t, DMatrix::from_column_slice(3, 1, &[3.0, 4.0, 5.0]));
        let (x, _) = autoregressive_reformat(&y, 4).unwrap();
        assert_eq!(x.nrows(), 1);
        assert!(autoregressive_reformat(&y, 5).is_err());
    }

    #[test]
    fn reformat_is_time_major() {
        let y = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]);
        let (x, t) = autoregressive_reformat(&y, 2).unwrap();
        assert_eq!(x.shape(), (2, 4));
        assert_eq!(x.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 10.0, 2.0, 20.0]);
        assert_eq!(t.row(1).iter().copied().collect::<Vec<_>>(), vec![4.0, 40.0]);
    }
}
