use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ModelState;
use crate::bound::{effective_variances, factor_kuu};
use crate::error::{check_dim, Error, Result};
use crate::kernel::{kern_raw, psi1_raw, psi2_raw, GaussianInputDistribution, KernelParams};
use crate::linalg::{cholesky, symmetrize, trace_product};

/// Per-output-dimension predictive mean and variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveGaussian {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Posterior over inducing outputs, cached in the form the predictive
/// equations need.
#[derive(Clone, Debug)]
pub struct Posterior {
    kernel: KernelParams,
    inducing: DMatrix<f64>,
    /// β A⁻¹ Ψ₁ᵀ Y, M×D.
    alpha: DMatrix<f64>,
    /// K_uu⁻¹ − A⁻¹.
    var_core: DMatrix<f64>,
    offset: DVector<f64>,
}

impl Posterior {
    pub fn new(state: &ModelState) -> Result<Self> {
        state.validate()?;
        let p = &state.kernel;
        let z = &state.inducing.points;
        let m = z.nrows();
        let beta = p.noise_precision;
        let s = effective_variances(state);
        let mu = &state.q_input.means;
        let kuu = factor_kuu(z, p)?;
        let psi1 = psi1_raw(mu, &s, z, p);
        let psi2 = psi2_raw(mu, &s, z, p);
        let x = kuu.solve_lower(&psi2);
        let mut w = kuu.solve_lower(&x.transpose());
        symmetrize(&mut w);
        let b = DMatrix::identity(m, m) + &w * beta;
        let lb = cholesky(&b, "I + β L⁻¹Ψ₂L⁻ᵀ")?;
        let mut linv = DMatrix::identity(m, m);
        kuu.l.solve_lower_triangular_mut(&mut linv);
        let mut lb_inv = DMatrix::identity(m, m);
        lb.solve_lower_triangular_mut(&mut lb_inv);
        let t = lb_inv * &linv;
        let mut a_inv = t.transpose() * &t;
        symmetrize(&mut a_inv);
        let alpha = &a_inv * (psi1.transpose() * &state.train_outputs) * beta;
        let mut var_core = kuu.inverse() - a_inv;
        symmetrize(&mut var_core);
        Ok(Self {
            kernel: p.clone(),
            inducing: z.clone(),
            alpha,
            var_core,
            offset: state.output_offset.clone(),
        })
    }

    pub fn q(&self) -> usize {
        self.kernel.input_dim()
    }

    pub fn d(&self) -> usize {
        self.alpha.ncols()
    }

    fn floor(&self) -> f64 {
        1e-12 * self.kernel.signal_variance
    }

    /// Predictive moments at a certain input.
    pub fn deterministic(&self, x_star: &[f64], include_noise: bool) -> Result<PredictiveGaussian> {
        check_dim("test input", self.q(), x_star.len())?;
        if x_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("test input".into()));
        }
        let x = DMatrix::from_row_slice(1, x_star.len(), x_star);
        let k = kern_raw(&self.inducing, &x, &self.kernel);
        let f_mean = self.alpha.transpose() * &k;
        let quad = (k.transpose() * &self.var_core * &k)[(0, 0)];
        let mut var = (self.kernel.signal_variance - quad).max(self.floor());
        if include_noise {
            var += self.kernel.noise_variance();
        }
        Ok(PredictiveGaussian {
            mean: (0..self.d()).map(|d| f_mean[(d, 0)] + self.offset[d]).collect(),
            variance: vec![var; self.d()],
        })
    }

    /// Exact first two moments under `x* ~ N(mean, diag var)`.
    pub fn uncertain(&self, mean: &[f64], var: &[f64], include_noise: bool) -> Result<PredictiveGaussian> {
        check_dim("test input mean", self.q(), mean.len())?;
        check_dim("test input variance", self.q(), var.len())?;
        if var.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("test input variances must be finite and non-negative".into()));
        }
        if var.iter().all(|v| *v == 0.0) {
            return self.deterministic(mean, include_noise);
        }
        let mu = DMatrix::from_row_slice(1, mean.len(), mean);
        let s = DMatrix::from_row_slice(1, var.len(), var);
        let psi1 = psi1_raw(&mu, &s, &self.inducing, &self.kernel);
        let psi2 = psi2_raw(&mu, &s, &self.inducing, &self.kernel);
        let f_mean = psi1 * &self.alpha;
        let base = self.kernel.signal_variance - trace_product(&self.var_core, &psi2);
        let noise = if include_noise { self.kernel.noise_variance() } else { 0.0 };
        let mut out_mean = Vec::with_capacity(self.d());
        let mut out_var = Vec::with_capacity(self.d());
        for d in 0..self.d() {
            let a = self.alpha.column(d);
            let second = (a.transpose() * &psi2 * a)[(0, 0)];
            let m = f_mean[(0, d)];
            out_mean.push(m + self.offset[d]);
            out_var.push((base + second - m * m).max(self.floor()) + noise);
        }
        Ok(PredictiveGaussian {
            mean: out_mean,
            variance: out_var,
        })
    }
}

/// Predictive moments of f(x*) (plus observation noise when `include_noise`).
pub fn predict_deterministic(state: &ModelState, x_star: &[f64], include_noise: bool) -> Result<PredictiveGaussian> {
    Posterior::new(state)?.deterministic(x_star, include_noise)
}

/// Predictive moments under a one-point input distribution.
pub fn predict_uncertain(
    state: &ModelState,
    qx_star: &GaussianInputDistribution,
    include_noise: bool,
) -> Result<PredictiveGaussian> {
    check_dim("uncertain test points", 1, qx_star.n())?;
    let mean: Vec<f64> = qx_star.means.row(0).iter().copied().collect();
    let var: Vec<f64> = qx_star.variances.row(0).iter().copied().collect();
    Posterior::new(state)?.uncertain(&mean, &var, include_noise)
}
