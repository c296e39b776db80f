//! Comparison methods.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::bound::Objective;
use crate::dataset::MaskedDataset;
use crate::error::{check_dim, Error, Result};
use crate::harness::metrics::{metrics, Metrics};
use crate::kernel::Mask;
use crate::model::{fit, init, FitConfig, FitReport, ModelState, Posterior, PredictiveGaussian};
use crate::pipelines::semi_described::{
    semi_described_from_stage1, semi_described_with, ImputationMode, SemiDescribedResult,
};
use crate::pipelines::{forecast_with_posterior, iterative_forecast, ForecastConfig};

const RIDGE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub name: String,
    pub predictions: Vec<Vec<f64>>,
    /// Mean squared error of each test row.
    pub per_point_error: Vec<f64>,
    pub mae: f64,
    pub mse: f64,
}

impl BaselineResult {
    pub fn new(name: &str, predictions: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Self> {
        let Metrics { mae, mse, .. } = metrics(predictions, truth)?;
        let per_point_error = (0..truth.nrows())
            .map(|r| {
                (0..truth.ncols())
                    .map(|c| (predictions[(r, c)] - truth[(r, c)]).powi(2))
                    .sum::<f64>()
                    / truth.ncols() as f64
            })
            .collect();
        Ok(Self {
            name: name.to_string(),
            predictions: predictions.row_iter().map(|r| r.iter().copied().collect()).collect(),
            per_point_error,
            mae,
            mse,
        })
    }
}

/// Every prediction is the column mean of `train_y`.
pub fn mean_predictor(train_y: &DMatrix<f64>, test_count: usize) -> Result<DMatrix<f64>> {
    if train_y.nrows() == 0 {
        return Err(Error::EmptyInput("mean predictor needs training outputs".into()));
    }
    let mean = train_y.row_mean();
    Ok(DMatrix::from_fn(test_count, train_y.ncols(), |_, c| mean[c]))
}

/// Column means over finite entries; 0 for columns with none.
fn observed_column_means(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols())
        .map(|c| {
            let obs: Vec<f64> = x.column(c).iter().copied().filter(|v| v.is_finite()).collect();
            if obs.is_empty() {
                0.0
            } else {
                obs.iter().sum::<f64>() / obs.len() as f64
            }
        })
        .collect()
}

fn with_bias(x: &DMatrix<f64>, fill: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols() + 1, |r, c| {
        if c == 0 {
            1.0
        } else if x[(r, c - 1)].is_finite() {
            x[(r, c - 1)]
        } else {
            fill[c - 1]
        }
    })
}

/// Least-squares linear map with bias. Missing (NaN) inputs are replaced by
/// the training column means; rank-deficient designs fall back to ridge.
pub fn mlr_fit_predict(train_x: &DMatrix<f64>, train_y: &DMatrix<f64>, test_x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim("MLR training rows", train_x.nrows(), train_y.nrows())?;
    check_dim("MLR test columns", train_x.ncols(), test_x.ncols())?;
    if train_x.nrows() == 0 {
        return Err(Error::EmptyInput("MLR needs training rows".into()));
    }
    let fill = observed_column_means(train_x);
    let a = with_bias(train_x, &fill);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let full_rank = a.nrows() >= a.ncols() && smin > smax * 1e-10;
    let w = if full_rank {
        svd.solve(train_y, 0.0).map_err(|e| Error::Degenerate(e.to_string()))?
    } else {
        let mut ata = a.transpose() * &a;
        for i in 0..ata.nrows() {
            ata[(i, i)] += RIDGE;
        }
        let chol = ata
            .cholesky()
            .ok_or_else(|| Error::Degenerate("ridge system is not positive definite".into()))?;
        chol.solve(&(a.transpose() * train_y))
    };
    Ok(with_bias(test_x, &fill) * w)
}

/// Nearest neighbour over the dimensions observed in both rows, with the
/// squared distance divided by the number of such dimensions. Training rows
/// sharing no observed dimension with the query are skipped; if all are,
/// the prediction is the training mean. Ties go to the lowest row index.
pub fn nn_predict(
    train_x: &DMatrix<f64>,
    train_mask: &Mask,
    train_y: &DMatrix<f64>,
    test_x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_dim("NN training rows", train_x.nrows(), train_y.nrows())?;
    check_dim("NN mask rows", train_x.nrows(), train_mask.rows())?;
    check_dim("NN test columns", train_x.ncols(), test_x.ncols())?;
    if train_x.nrows() == 0 {
        return Err(Error::EmptyInput("NN needs training rows".into()));
    }
    let fallback = train_y.row_mean();
    let mut out = DMatrix::zeros(test_x.nrows(), train_y.ncols());
    for t in 0..test_x.nrows() {
        let mut best: Option<(usize, f64)> = None;
        for r in 0..train_x.nrows() {
            let mut sum = 0.0;
            let mut count = 0usize;
            for c in 0..train_x.ncols() {
                let q = test_x[(t, c)];
                if train_mask.get(r, c) && q.is_finite() {
                    sum += (train_x[(r, c)] - q).powi(2);
                    count += 1;
                }
            }
            if count == 0 {
                continue;
            }
            let dist = sum / count as f64;
            if best.map_or(true, |(_, b)| dist < b) {
                best = Some((r, dist));
            }
        }
        match best {
            Some((r, _)) => out.set_row(t, &train_y.row(r)),
            None => out.set_row(t, &fallback),
        }
    }
    Ok(out)
}

/// Two-stage imputation like the semi-described pipeline, but imputed
/// entries are point estimates: posterior means with variance ε, and only
/// the means move in stage 3.
pub fn gplvm_impute(dataset: &MaskedDataset, config: &FitConfig) -> Result<SemiDescribedResult> {
    semi_described_with(dataset, config, ImputationMode::PointEstimate)
}

/// [`gplvm_impute`] reusing an existing stage-1 fit.
pub fn gplvm_impute_from_stage1(
    dataset: &MaskedDataset,
    stage1: ModelState,
    stage1_report: FitReport,
    config: &FitConfig,
) -> Result<SemiDescribedResult> {
    semi_described_from_stage1(dataset, stage1, stage1_report, config, ImputationMode::PointEstimate)
}

/// Free simulation with every window slot treated as exact.
pub fn naive_ar_forecast(
    state: &ModelState,
    seed_window: &[f64],
    window: usize,
    horizon: usize,
) -> Result<Vec<PredictiveGaussian>> {
    let cfg = ForecastConfig {
        window,
        horizon,
        propagate_uncertainty: false,
        include_noise: true,
    };
    iterative_forecast(state, seed_window, &cfg)
}

/// Standard sparse GP (projected-process marginal likelihood, inputs taken
/// as exact) fit with the same initialization and optimizer settings as the
/// main model.
pub fn fit_projected(dataset: &MaskedDataset, config: &FitConfig) -> Result<(ModelState, FitReport)> {
    let mut state = init(dataset, config)?;
    state.objective = Objective::Projected;
    fit(&state, config)
}

/// Rolling-window moment matching against a standard sparse GP posterior.
pub fn moment_matched_forecast(
    state: &ModelState,
    seed_window: &[f64],
    config: &ForecastConfig,
) -> Result<Vec<PredictiveGaussian>> {
    let cfg = ForecastConfig {
        propagate_uncertainty: true,
        ..config.clone()
    };
    forecast_with_posterior(&Posterior::new(state)?, seed_window, &cfg, |_, _, _| {})
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaProjection {
    pub mean: DVector<f64>,
    /// Columns are principal directions, by decreasing variance.
    pub basis: DMatrix<f64>,
    pub variances: DVector<f64>,
    pub projections: DMatrix<f64>,
}

impl PcaProjection {
    pub fn project(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("PCA input columns", self.mean.len(), x.ncols())?;
        let mut c = x.clone();
        for mut r in c.row_iter_mut() {
            r -= self.mean.transpose();
        }
        Ok(c * &self.basis)
    }
}

/// Centered principal-component projection onto `dim` components.
pub fn pca_features(x: &DMatrix<f64>, dim: usize) -> Result<PcaProjection> {
    let (n, d) = x.shape();
    if dim == 0 || dim > n.min(d) {
        return Err(Error::InvalidParameter(format!(
            "PCA dimension {dim} must be in 1..={}",
            n.min(d)
        )));
    }
    let mean = x.row_mean().transpose();
    let mut c = x.clone();
    for mut r in c.row_iter_mut() {
        r -= mean.transpose();
    }
    let eig = SymmetricEigen::new(c.transpose() * &c / n as f64);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let mut basis = DMatrix::zeros(d, dim);
    let mut variances = DVector::zeros(dim);
    for (j, &k) in order.iter().take(dim).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        // Deterministic sign: largest-magnitude loading positive.
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v = -v;
        }
        basis.set_column(j, &v);
        variances[j] = eig.eigenvalues[k].max(0.0);
    }
    let projections = &c * &basis;
    Ok(PcaProjection {
        mean,
        basis,
        variances,
        projections,
    })
}
