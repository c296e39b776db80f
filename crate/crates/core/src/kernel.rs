//! RBF-ARD covariance and its expectations under diagonal Gaussian inputs.
//!
//! With `k(x, x') = σ² exp(-½ Σ_q (x_q - x'_q)² / ℓ_q²)` and
//! `x_n ~ N(μ_n, diag S_n)` the statistics have closed forms:
//!
//! ```text
//! ψ₀         = Σ_n σ²
//! Ψ₁[n,m]    = σ² Π_q (1 + S_nq/ℓ_q²)^-½ exp(-½ (μ_nq - z_mq)² / (ℓ_q² + S_nq))
//! Ψ₂[m,m']   = Σ_n σ⁴ Π_q (1 + 2S_nq/ℓ_q²)^-½
//!                   exp(-(z_mq - z_m'q)² / 4ℓ_q² - (μ_nq - z̄_q)² / (ℓ_q² + 2S_nq))
//! ```
//!
//! where `z̄ = (z_m + z_m') / 2`. Gradients are exposed as vector-Jacobian
//! products: given an adjoint `G` with the shape of the statistic, they return
//! `∂ Σ_ij G_ij Ψ_ij / ∂θ` for every parameter class.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Variance used for the peaked Gaussians that stand in for observed inputs.
pub const PEAKED_VARIANCE: f64 = 1e-6;

/// Initial diagonal jitter on K_uu, relative to the signal variance.
pub const JITTER_FACTOR: f64 = 1e-6;

/// Largest jitter the factorization ladder will try, relative to the signal variance.
pub const MAX_JITTER_FACTOR: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub noise_precision: f64,
}

impl KernelParams {
    pub fn new(signal_variance: f64, lengthscales: Vec<f64>, noise_precision: f64) -> Result<Self> {
        let p = Self {
            signal_variance,
            lengthscales,
            noise_precision,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.signal_variance) {
            return Err(Error::InvalidParameter(format!(
                "signal variance must be positive, got {}",
                self.signal_variance
            )));
        }
        if !positive(self.noise_precision) {
            return Err(Error::InvalidParameter(format!(
                "noise precision must be positive, got {}",
                self.noise_precision
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidParameter("no lengthscales".into()));
        }
        if let Some(l) = self.lengthscales.iter().find(|l| !positive(**l)) {
            return Err(Error::InvalidParameter(format!(
                "lengthscales must be positive, got {l}"
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn noise_variance(&self) -> f64 {
        1.0 / self.noise_precision
    }

    pub fn jitter(&self) -> f64 {
        JITTER_FACTOR * self.signal_variance
    }
}

/// Row-major boolean matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("mask row length", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn all(&self) -> bool {
        self.data.iter().all(|v| *v)
    }

    pub fn none(&self) -> bool {
        !self.data.iter().any(|v| *v)
    }

    pub fn to_rows(&self) -> Vec<Vec<bool>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Factorized `q(X|Z) = Π_n N(x_n | μ_n, diag S_n)`.
///
/// Entries flagged in `fixed_mask` are clamped to an observed value with the
/// peaked variance [`PEAKED_VARIANCE`] and are never optimized.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianInputDistribution {
    pub means: DMatrix<f64>,
    pub variances: DMatrix<f64>,
    pub fixed_mask: Mask,
}

impl GaussianInputDistribution {
    pub fn new(means: DMatrix<f64>, variances: DMatrix<f64>, fixed_mask: Mask) -> Result<Self> {
        let q = Self {
            means,
            variances,
            fixed_mask,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("variance rows", self.means.nrows(), self.variances.nrows())?;
        check_dim("variance cols", self.means.ncols(), self.variances.ncols())?;
        check_dim("mask rows", self.means.nrows(), self.fixed_mask.rows())?;
        check_dim("mask cols", self.means.ncols(), self.fixed_mask.cols())?;
        for (i, v) in self.variances.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "variance entry {i} is {v}; must be finite and non-negative"
                )));
            }
        }
        if let Some(m) = self.means.iter().find(|m| !m.is_finite()) {
            return Err(Error::NonFinite(format!("mean entry {m}")));
        }
        for n in 0..self.n() {
            for q in 0..self.q() {
                if self.fixed_mask.get(n, q) && self.variances[(n, q)] != PEAKED_VARIANCE {
                    return Err(Error::InvalidParameter(format!(
                        "fixed entry ({n},{q}) has variance {} instead of the peaked constant",
                        self.variances[(n, q)]
                    )));
                }
            }
        }
        Ok(())
    }

    /// All entries observed: means clamped to `z`, variances `ε`.
    pub fn peaked(z: &DMatrix<f64>) -> Self {
        Self {
            means: z.clone(),
            variances: DMatrix::from_element(z.nrows(), z.ncols(), PEAKED_VARIANCE),
            fixed_mask: Mask::filled(z.nrows(), z.ncols(), true),
        }
    }

    /// Fully latent (Bayesian GP-LVM) distribution.
    pub fn latent(means: DMatrix<f64>, variances: DMatrix<f64>) -> Result<Self> {
        let mask = Mask::filled(means.nrows(), means.ncols(), false);
        Self::new(means, variances, mask)
    }

    /// A single free point.
    pub fn point(mean: &[f64], variance: &[f64]) -> Result<Self> {
        check_dim("point variance", mean.len(), variance.len())?;
        Self::latent(
            DMatrix::from_row_slice(1, mean.len(), mean),
            DMatrix::from_row_slice(1, variance.len(), variance),
        )
    }

    pub fn n(&self) -> usize {
        self.means.nrows()
    }

    pub fn q(&self) -> usize {
        self.means.ncols()
    }

    pub fn free_count(&self) -> usize {
        self.fixed_mask.rows() * self.fixed_mask.cols() - self.fixed_mask.count()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            means: self.means.select_rows(rows),
            variances: self.variances.select_rows(rows),
            fixed_mask: self.fixed_mask.select_rows(rows),
        }
    }

    pub fn row(&self, n: usize) -> Self {
        self.select_rows(&[n])
    }
}

/// Inducing inputs `X_u` (M×Q).
#[derive(Clone, Debug, PartialEq)]
pub struct InducingSet {
    pub points: DMatrix<f64>,
}

impl InducingSet {
    pub fn new(points: DMatrix<f64>) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::EmptyInput("inducing set needs at least one point".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("inducing point coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn m(&self) -> usize {
        self.points.nrows()
    }

    /// Indices of pairs of rows closer than `tol` in sup-norm.
    pub fn near_duplicates(&self, tol: f64) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.m() {
            for j in (i + 1)..self.m() {
                let d = self
                    .points
                    .row(i)
                    .iter()
                    .zip(self.points.row(j).iter())
                    .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
                if d <= tol {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Which statistic a gradient request refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Statistic {
    Kern,
    Psi0,
    Psi1,
    Psi2,
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kern" | "k" => Ok(Self::Kern),
            "psi0" => Ok(Self::Psi0),
            "psi1" => Ok(Self::Psi1),
            "psi2" => Ok(Self::Psi2),
            other => Err(Error::UnknownSelector(other.to_string())),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Kern => "kern",
            Self::Psi0 => "psi0",
            Self::Psi1 => "psi1",
            Self::Psi2 => "psi2",
        })
    }
}

/// Vector-Jacobian products of a statistic with respect to every parameter
/// class. For `kern(X, X2)` the `means` slot holds ∂/∂X and `inducing` ∂/∂X2.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelGrads {
    pub signal_variance: f64,
    pub lengthscales: DVector<f64>,
    pub inducing: DMatrix<f64>,
    pub means: DMatrix<f64>,
    pub variances: DMatrix<f64>,
}

impl KernelGrads {
    pub fn zeros(n: usize, m: usize, q: usize) -> Self {
        Self {
            signal_variance: 0.0,
            lengthscales: DVector::zeros(q),
            inducing: DMatrix::zeros(m, q),
            means: DMatrix::zeros(n, q),
            variances: DMatrix::zeros(n, q),
        }
    }
}

fn check_q(context: &'static str, params: &KernelParams, cols: usize) -> Result<()> {
    check_dim(context, params.input_dim(), cols)
}

/// `K[i,j] = k(x_i, x2_j)`.
pub fn kern(x: &DMatrix<f64>, x2: &DMatrix<f64>, params: &KernelParams) -> Result<DMatrix<f64>> {
    params.validate()?;
    check_q("kern X columns", params, x.ncols())?;
    check_q("kern X2 columns", params, x2.ncols())?;
    Ok(kern_raw(x, x2, params))
}

pub(crate) fn kern_raw(x: &DMatrix<f64>, x2: &DMatrix<f64>, p: &KernelParams) -> DMatrix<f64> {
    let inv_l2: Vec<f64> = p.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    DMatrix::from_fn(x.nrows(), x2.nrows(), |i, j| {
        let mut r2 = 0.0;
        for (q, il) in inv_l2.iter().enumerate() {
            let d = x[(i, q)] - x2[(j, q)];
            r2 += d * d * il;
        }
        p.signal_variance * (-0.5 * r2).exp()
    })
}

/// K(Z, Z) with no jitter.
pub(crate) fn kuu_raw(z: &DMatrix<f64>, p: &KernelParams) -> DMatrix<f64> {
    let mut k = kern_raw(z, z, p);
    crate::linalg::symmetrize(&mut k);
    k
}

pub(crate) fn kern_grads_raw(
    x: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    p: &KernelParams,
    adjoint: &DMatrix<f64>,
) -> KernelGrads {
    let qd = p.input_dim();
    let mut g = KernelGrads::zeros(x.nrows(), x2.nrows(), qd);
    let inv_l2: Vec<f64> = p.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    for i in 0..x.nrows() {
        for j in 0..x2.nrows() {
            let a = adjoint[(i, j)];
            if a == 0.0 {
                continue;
            }
            let mut r2 = 0.0;
            for q in 0..qd {
                let d = x[(i, q)] - x2[(j, q)];
                r2 += d * d * inv_l2[q];
            }
            let w = a * p.signal_variance * (-0.5 * r2).exp();
            g.signal_variance += w / p.signal_variance;
            for q in 0..qd {
                let d = x[(i, q)] - x2[(j, q)];
                let l = p.lengthscales[q];
                g.lengthscales[q] += w * d * d / (l * l * l);
                g.means[(i, q)] -= w * d * inv_l2[q];
                g.inducing[(j, q)] += w * d * inv_l2[q];
            }
        }
    }
    g
}

fn check_stats_shapes(q: &GaussianInputDistribution, u: &InducingSet, p: &KernelParams) -> Result<()> {
    p.validate()?;
    check_q("input distribution columns", p, q.q())?;
    check_q("inducing columns", p, u.points.ncols())?;
    Ok(())
}

/// ψ₀ = Σ_n ⟨k(x_n, x_n)⟩ = N σ².
pub fn psi0(q: &GaussianInputDistribution, params: &KernelParams) -> Result<f64> {
    params.validate()?;
    check_q("input distribution columns", params, q.q())?;
    Ok(q.n() as f64 * params.signal_variance)
}

/// Ψ₁[n,m] = ⟨k(x_n, z_m)⟩_{q(x_n)}.
pub fn psi1(q: &GaussianInputDistribution, u: &InducingSet, params: &KernelParams) -> Result<DMatrix<f64>> {
    check_stats_shapes(q, u, params)?;
    Ok(psi1_raw(&q.means, &q.variances, &u.points, params))
}

/// Ψ₂[m,m'] = Σ_n ⟨k(x_n, z_m) k(x_n, z_m')⟩_{q(x_n)}.
pub fn psi2(q: &GaussianInputDistribution, u: &InducingSet, params: &KernelParams) -> Result<DMatrix<f64>> {
    check_stats_shapes(q, u, params)?;
    Ok(psi2_raw(&q.means, &q.variances, &u.points, params))
}

pub(crate) fn psi1_raw(
    mu: &DMatrix<f64>,
    s: &DMatrix<f64>,
    z: &DMatrix<f64>,
    p: &KernelParams,
) -> DMatrix<f64> {
    let (n, qd) = (mu.nrows(), mu.ncols());
    let m = z.nrows();
    let l2: Vec<f64> = p.lengthscales.iter().map(|l| l * l).collect();
    let mut out = DMatrix::zeros(n, m);
    let mut inv_den = vec![0.0; qd];
    for i in 0..n {
        let mut log_norm = 0.0;
        for q in 0..qd {
            let den = l2[q] + s[(i, q)];
            inv_den[q] = 1.0 / den;
            log_norm -= 0.5 * (den / l2[q]).ln();
        }
        for j in 0..m {
            let mut e = 0.0;
            for q in 0..qd {
                let d = mu[(i, q)] - z[(j, q)];
                e += d * d * inv_den[q];
            }
            out[(i, j)] = p.signal_variance * (log_norm - 0.5 * e).exp();
        }
    }
    out
}

pub(crate) fn psi1_grads_raw(
    mu: &DMatrix<f64>,
    s: &DMatrix<f64>,
    z: &DMatrix<f64>,
    p: &KernelParams,
    adjoint: &DMatrix<f64>,
) -> KernelGrads {
    let (n, qd) = (mu.nrows(), mu.ncols());
    let m = z.nrows();
    let mut g = KernelGrads::zeros(n, m, qd);
    let psi = psi1_raw(mu, s, z, p);
    let l2: Vec<f64> = p.lengthscales.iter().map(|l| l * l).collect();
    for i in 0..n {
        for j in 0..m {
            let w = adjoint[(i, j)] * psi[(i, j)];
            if w == 0.0 {
                continue;
            }
            g.signal_variance += w / p.signal_variance;
            for q in 0..qd {
                let l = p.lengthscales[q];
                let den = l2[q] + s[(i, q)];
                let d = mu[(i, q)] - z[(j, q)];
                let dd = d / den;
                g.means[(i, q)] -= w * dd;
                g.inducing[(j, q)] += w * dd;
                g.variances[(i, q)] += w * 0.5 * (dd * dd - 1.0 / den);
                g.lengthscales[q] += w * (1.0 / l - l / den + l * dd * dd);
            }
        }
    }
    g
}

/// Per-pair factor exp(-Σ_q (z_m - z_m')² / 4ℓ_q²), shared by all data points.
fn psi2_pair_log(z: &DMatrix<f64>, l2: &[f64]) -> DMatrix<f64> {
    let m = z.nrows();
    DMatrix::from_fn(m, m, |a, b| {
        let mut e = 0.0;
        for (q, l2q) in l2.iter().enumerate() {
            let d = z[(a, q)] - z[(b, q)];
            e += d * d / (4.0 * l2q);
        }
        -e
    })
}

pub(crate) fn psi2_raw(
    mu: &DMatrix<f64>,
    s: &DMatrix<f64>,
    z: &DMatrix<f64>,
    p: &KernelParams,
) -> DMatrix<f64> {
    let (n, qd) = (mu.nrows(), mu.ncols());
    let m = z.nrows();
    let l2: Vec<f64> = p.lengthscales.iter().map(|l| l * l).collect();
    let pair = psi2_pair_log(z, &l2);
    let sf4 = p.signal_variance * p.signal_variance;
    let mut out = DMatrix::zeros(m, m);
    let mut inv_den = vec![0.0; qd];
    let mut zbar = vec![0.0; qd];
    for i in 0..n {
        let mut log_norm = 0.0;
        for q in 0..qd {
            let den = l2[q] + 2.0 * s[(i, q)];
            inv_den[q] = 1.0 / den;
            log_norm -= 0.5 * (den / l2[q]).ln();
        }
        for a in 0..m {
            for b in a..m {
                for q in 0..qd {
                    zbar[q] = 0.5 * (z[(a, q)] + z[(b, q)]);
                }
                let mut e = 0.0;
                for q in 0..qd {
                    let d = mu[(i, q)] - zbar[q];
                    e += d * d * inv_den[q];
                }
                let v = sf4 * (log_norm + pair[(a, b)] - e).exp();
                out[(a, b)] += v;
                if a != b {
                    out[(b, a)] += v;
                }
            }
        }
    }
    out
}

pub(crate) fn psi2_grads_raw(
    mu: &DMatrix<f64>,
    s: &DMatrix<f64>,
    z: &DMatrix<f64>,
    p: &KernelParams,
    adjoint: &DMatrix<f64>,
) -> KernelGrads {
    let (n, qd) = (mu.nrows(), mu.ncols());
    let m = z.nrows();
    let mut g = KernelGrads::zeros(n, m, qd);
    let l2: Vec<f64> = p.lengthscales.iter().map(|l| l * l).collect();
    let pair = psi2_pair_log(z, &l2);
    let sf4 = p.signal_variance * p.signal_variance;
    // Only the symmetric part of the adjoint contributes.
    let sym = (adjoint + adjoint.transpose()) * 0.5;
    let mut den = vec![0.0; qd];
    for i in 0..n {
        let mut log_norm = 0.0;
        for q in 0..qd {
            den[q] = l2[q] + 2.0 * s[(i, q)];
            log_norm -= 0.5 * (den[q] / l2[q]).ln();
        }
        for a in 0..m {
            for b in a..m {
                let weight = if a == b { sym[(a, b)] } else { 2.0 * sym[(a, b)] };
                if weight == 0.0 {
                    continue;
                }
                let mut e = 0.0;
                for q in 0..qd {
                    let d = mu[(i, q)] - 0.5 * (z[(a, q)] + z[(b, q)]);
                    e += d * d / den[q];
                }
                let w = weight * sf4 * (log_norm + pair[(a, b)] - e).exp();
                g.signal_variance += 2.0 * w / p.signal_variance;
                for q in 0..qd {
                    let l = p.lengthscales[q];
                    let delta = z[(a, q)] - z[(b, q)];
                    let ebar = mu[(i, q)] - 0.5 * (z[(a, q)] + z[(b, q)]);
                    let r = ebar / den[q];
                    g.means[(i, q)] -= w * 2.0 * r;
                    g.variances[(i, q)] += w * (2.0 * r * r - 1.0 / den[q]);
                    g.lengthscales[q] += w
                        * (1.0 / l - l / den[q]
                            + delta * delta / (2.0 * l * l * l)
                            + 2.0 * l * r * r);
                    let dpair = delta / (2.0 * l2[q]);
                    g.inducing[(a, q)] += w * (r - dpair);
                    g.inducing[(b, q)] += w * (r + dpair);
                }
            }
        }
    }
    g
}

/// Vector-Jacobian product of the selected statistic with `adjoint`.
///
/// `adjoint` must have the statistic's shape: N×M for `Kern` (evaluated as
/// `kern(μ, X_u)`) and `Psi1`, M×M for `Psi2`, 1×1 for `Psi0`.
pub fn kernel_grads(
    which: Statistic,
    q: &GaussianInputDistribution,
    u: &InducingSet,
    params: &KernelParams,
    adjoint: &DMatrix<f64>,
) -> Result<KernelGrads> {
    check_stats_shapes(q, u, params)?;
    let (n, m) = (q.n(), u.m());
    let expect = |r: usize, c: usize| -> Result<()> {
        check_dim("adjoint rows", r, adjoint.nrows())?;
        check_dim("adjoint cols", c, adjoint.ncols())
    };
    match which {
        Statistic::Kern => {
            expect(n, m)?;
            Ok(kern_grads_raw(&q.means, &u.points, params, adjoint))
        }
        Statistic::Psi0 => {
            expect(1, 1)?;
            let mut g = KernelGrads::zeros(n, m, q.q());
            g.signal_variance = adjoint[(0, 0)] * n as f64;
            Ok(g)
        }
        Statistic::Psi1 => {
            expect(n, m)?;
            Ok(psi1_grads_raw(&q.means, &q.variances, &u.points, params, adjoint))
        }
        Statistic::Psi2 => {
            expect(m, m)?;
            Ok(psi2_grads_raw(&q.means, &q.variances, &u.points, params, adjoint))
        }
    }
}

/// Parse a statistic name and forward to [`kernel_grads`].
pub fn kernel_grads_by_name(
    which: &str,
    q: &GaussianInputDistribution,
    u: &InducingSet,
    params: &KernelParams,
    adjoint: &DMatrix<f64>,
) -> Result<KernelGrads> {
    kernel_grads(which.parse()?, q, u, params, adjoint)
}
