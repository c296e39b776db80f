//! The collapsed variational lower bound and its gradient.
//!
//! With `A = K_uu + β Ψ₂` and the optimal `q(U)` substituted back, the bound
//! for D output columns is
//!
//! ```text
//! F = -ND/2 ln 2π + ND/2 ln β - D/2 ln|A K_uu⁻¹| - β/2 tr(YᵀY)
//!     + β²/2 tr(Yᵀ Ψ₁ A⁻¹ Ψ₁ᵀ Y)                       (data fit)
//!     - βD/2 ψ₀ + βD/2 tr(K_uu⁻¹ Ψ₂)                    (trace correction)
//!     - KL[q(X|Z) ‖ N(0, I)]
//! ```
//!
//! All solves go through Cholesky factors of `K_uu` and `B = I + β L⁻¹ Ψ₂ L⁻ᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    kern_grads_raw, kuu_raw, psi1_grads_raw, psi1_raw, psi2_grads_raw, psi2_raw,
    GaussianInputDistribution, KernelParams, MAX_JITTER_FACTOR,
};
use crate::linalg::{cholesky, cholesky_with_jitter, symmetrize, trace_product, JitteredFactor};
use crate::model::{ModelState, Packing, ParamGroups};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParts {
    pub data_fit: f64,
    pub trace_correction: f64,
    pub kl_term: f64,
    pub total: f64,
}

/// Which objective a model is trained under.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Collapsed variational bound with psi statistics and the KL term.
    #[default]
    Variational,
    /// Projected-process (DTC) marginal likelihood at the input means: the
    /// data-fit term only, with input variances ignored. This is the standard
    /// non-variational sparse GP.
    Projected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// KL[q ‖ N(0, I)] summed over every entry.
pub fn kl_gaussian_diag(q: &GaussianInputDistribution) -> Result<f64> {
    if let Some(v) = q.variances.iter().find(|v| **v <= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "KL needs strictly positive variances, found {v}"
        )));
    }
    Ok(kl_raw(&q.means, &q.variances))
}

pub(crate) fn kl_raw(mu: &DMatrix<f64>, s: &DMatrix<f64>) -> f64 {
    mu.iter()
        .zip(s.iter())
        .map(|(m, v)| 0.5 * (v + m * m - 1.0 - v.ln()))
        .sum()
}

/// Sufficient statistics of the data for the collapsed bound.
pub(crate) struct Statistics {
    pub psi0: f64,
    /// Ψ₁ᵀ Y, M×D.
    pub p: DMatrix<f64>,
    pub psi2: DMatrix<f64>,
    /// tr(YᵀY).
    pub yy: f64,
    pub n: usize,
}

/// ∂F/∂(statistic) for every input of [`collapsed_terms`].
pub(crate) struct Adjoints {
    pub psi0: f64,
    pub p: DMatrix<f64>,
    pub psi2: DMatrix<f64>,
    pub kuu: DMatrix<f64>,
    pub beta: f64,
}

pub(crate) struct Terms {
    pub data_fit: f64,
    pub trace_correction: f64,
}

/// Evaluate the data-fit and trace terms and, optionally, their adjoints.
pub(crate) fn collapsed_terms(
    stats: &Statistics,
    kuu: &JitteredFactor,
    beta: f64,
    objective: Objective,
    want_adjoints: bool,
) -> Result<(Terms, Option<Adjoints>)> {
    let m = kuu.l.nrows();
    let n = stats.n as f64;
    let d = stats.p.ncols() as f64;

    let x = kuu.solve_lower(&stats.psi2);
    let mut w = kuu.solve_lower(&x.transpose());
    symmetrize(&mut w);
    let b = DMatrix::identity(m, m) + &w * beta;
    let lb = cholesky(&b, "I + β L⁻¹Ψ₂L⁻ᵀ")?;
    let logdet_b = 2.0 * lb.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut c = kuu.solve_lower(&stats.p);
    lb.solve_lower_triangular_mut(&mut c);
    let c_sq = c.norm_squared();

    let data_fit = -0.5 * n * d * LN_2PI + 0.5 * n * d * beta.ln() - 0.5 * d * logdet_b
        - 0.5 * beta * stats.yy
        + 0.5 * beta * beta * c_sq;
    let tr_w = w.trace();
    let trace_correction = match objective {
        Objective::Variational => d * (-0.5 * beta * stats.psi0 + 0.5 * beta * tr_w),
        Objective::Projected => 0.0,
    };
    let terms = Terms {
        data_fit,
        trace_correction,
    };
    if !(data_fit.is_finite() && trace_correction.is_finite()) {
        return Err(Error::NonFinite("collapsed bound".into()));
    }
    if !want_adjoints {
        return Ok((terms, None));
    }

    let k_inv = kuu.inverse();
    let mut linv = DMatrix::identity(m, m);
    kuu.l.solve_lower_triangular_mut(&mut linv);
    let mut lb_inv = DMatrix::identity(m, m);
    lb.solve_lower_triangular_mut(&mut lb_inv);
    let b_inv = lb_inv.transpose() * &lb_inv;
    let a_inv = linv.transpose() * &b_inv * &linv;
    // C = A⁻¹ P = L⁻ᵀ LB⁻ᵀ c
    let mut big_c = c.clone();
    lb.tr_solve_lower_triangular_mut(&mut big_c);
    kuu.l.tr_solve_lower_triangular_mut(&mut big_c);
    let cct = &big_c * big_c.transpose();

    let p_adj = &big_c * (beta * beta);
    let mut psi2_adj = &a_inv * (-0.5 * d * beta) - &cct * (0.5 * beta * beta * beta);
    let mut kuu_adj = &k_inv * (0.5 * d) - &a_inv * (0.5 * d) - &cct * (0.5 * beta * beta);
    let mut beta_adj = 0.5 * n * d / beta - 0.5 * d * trace_product(&a_inv, &stats.psi2)
        - 0.5 * stats.yy
        + beta * c_sq
        - 0.5 * beta * beta * (big_c.transpose() * &stats.psi2 * &big_c).trace();
    let mut psi0_adj = 0.0;
    if objective == Objective::Variational {
        psi0_adj = -0.5 * beta * d;
        psi2_adj += &k_inv * (0.5 * d * beta);
        kuu_adj -= &k_inv * &stats.psi2 * &k_inv * (0.5 * beta * d);
        beta_adj += -0.5 * d * stats.psi0 + 0.5 * d * tr_w;
    }
    Ok((
        terms,
        Some(Adjoints {
            psi0: psi0_adj,
            p: p_adj,
            psi2: psi2_adj,
            kuu: kuu_adj,
            beta: beta_adj,
        }),
    ))
}

pub(crate) fn factor_kuu(z: &DMatrix<f64>, p: &KernelParams) -> Result<JitteredFactor> {
    cholesky_with_jitter(
        &kuu_raw(z, p),
        p.jitter(),
        MAX_JITTER_FACTOR * p.signal_variance,
        "K_uu",
    )
}

/// Gradient of the bound in natural (untransformed) coordinates.
#[derive(Clone, Debug)]
pub struct RawGradient {
    pub signal_variance: f64,
    pub lengthscales: DVector<f64>,
    pub noise_precision: f64,
    pub inducing: DMatrix<f64>,
    pub means: DMatrix<f64>,
    pub variances: DMatrix<f64>,
}

/// Input moments the likelihood terms see: the projected objective ignores
/// input variances.
pub(crate) fn effective_variances(state: &ModelState) -> DMatrix<f64> {
    match state.objective {
        Objective::Variational => state.q_input.variances.clone(),
        Objective::Projected => DMatrix::zeros(state.q_input.n(), state.q_input.q()),
    }
}

pub(crate) fn evaluate(state: &ModelState, want_grad: bool) -> Result<(BoundParts, Option<RawGradient>)> {
    let p = &state.kernel;
    let z = &state.inducing.points;
    let mu = &state.q_input.means;
    let s = effective_variances(state);
    let y = &state.train_outputs;
    let kuu = factor_kuu(z, p)?;
    let psi1 = psi1_raw(mu, &s, z, p);
    let psi2 = psi2_raw(mu, &s, z, p);
    let stats = Statistics {
        psi0: mu.nrows() as f64 * p.signal_variance,
        p: psi1.transpose() * y,
        psi2,
        yy: y.norm_squared(),
        n: mu.nrows(),
    };
    let (terms, adj) = collapsed_terms(&stats, &kuu, p.noise_precision, state.objective, want_grad)?;
    let kl_term = match state.objective {
        Objective::Variational => kl_gaussian_diag(&state.q_input)?,
        Objective::Projected => 0.0,
    };
    let parts = BoundParts {
        data_fit: terms.data_fit,
        trace_correction: terms.trace_correction,
        kl_term,
        total: terms.data_fit + terms.trace_correction - kl_term,
    };
    if !parts.total.is_finite() {
        return Err(Error::NonFinite("bound total".into()));
    }
    let Some(adj) = adj else {
        return Ok((parts, None));
    };

    let dpsi1 = y * adj.p.transpose();
    let g1 = psi1_grads_raw(mu, &s, z, p, &dpsi1);
    let g2 = psi2_grads_raw(mu, &s, z, p, &adj.psi2);
    let gk = kern_grads_raw(z, z, p, &adj.kuu);
    let jitter_ratio = kuu.jitter / p.signal_variance;

    let mut grad = RawGradient {
        signal_variance: g1.signal_variance
            + g2.signal_variance
            + gk.signal_variance
            + adj.psi0 * mu.nrows() as f64
            + jitter_ratio * adj.kuu.trace(),
        lengthscales: &g1.lengthscales + &g2.lengthscales + &gk.lengthscales,
        noise_precision: adj.beta,
        inducing: &g1.inducing + &g2.inducing + &gk.inducing + &gk.means,
        means: &g1.means + &g2.means,
        variances: &g1.variances + &g2.variances,
    };
    if state.objective == Objective::Variational {
        grad.means -= mu;
        grad.variances
            .zip_apply(&state.q_input.variances, |g, v| *g -= 0.5 * (1.0 - 1.0 / v));
    } else {
        grad.means.fill(0.0);
        grad.variances.fill(0.0);
    }
    Ok((parts, Some(grad)))
}

/// F₂ and its parts for the given state.
pub fn collapsed_bound(state: &ModelState) -> Result<BoundParts> {
    state.validate()?;
    Ok(evaluate(state, false)?.0)
}

/// `(data_fit, trace_correction)` alone. Unlike [`collapsed_bound`] this
/// accepts zero input variances, where the KL term is undefined.
pub fn likelihood_terms(state: &ModelState) -> Result<(f64, f64)> {
    state.validate()?;
    let p = &state.kernel;
    let z = &state.inducing.points;
    let mu = &state.q_input.means;
    let s = effective_variances(state);
    let y = &state.train_outputs;
    let stats = Statistics {
        psi0: mu.nrows() as f64 * p.signal_variance,
        p: psi1_raw(mu, &s, z, p).transpose() * y,
        psi2: psi2_raw(mu, &s, z, p),
        yy: y.norm_squared(),
        n: mu.nrows(),
    };
    let (terms, _) = collapsed_terms(&stats, &factor_kuu(z, p)?, p.noise_precision, state.objective, false)?;
    Ok((terms.data_fit, terms.trace_correction))
}

/// ∂F₂ in the optimizer's coordinates (log-transformed positives) for the
/// free parameters selected by `groups`.
pub fn bound_gradient(state: &ModelState, groups: ParamGroups) -> Result<GradientVector> {
    state.validate()?;
    let packing = state.packing(groups);
    let (_, grad) = evaluate(state, true)?;
    Ok(GradientVector {
        values: packing.transform_gradient(state, &grad.expect("gradient requested")),
    })
}

pub(crate) fn bound_and_packed_gradient(
    state: &ModelState,
    packing: &Packing,
) -> Result<(BoundParts, Vec<f64>)> {
    let (parts, grad) = evaluate(state, true)?;
    Ok((parts, packing.transform_gradient(state, &grad.expect("gradient requested"))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kl_examples() {
        let q = GaussianInputDistribution::point(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(kl_gaussian_diag(&q).unwrap(), 0.0, epsilon = 1e-15);
        let q = GaussianInputDistribution::point(&[1.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(kl_gaussian_diag(&q).unwrap(), 0.5, epsilon = 1e-15);
        let q = GaussianInputDistribution::point(&[0.0], &[0.25]).unwrap();
        assert_abs_diff_eq!(kl_gaussian_diag(&q).unwrap(), 0.318147, epsilon = 1e-6);
    }

    #[test]
    fn kl_rejects_zero_variance() {
        let q = GaussianInputDistribution::point(&[0.0], &[0.0]).unwrap();
        assert!(kl_gaussian_diag(&q).is_err());
    }
}
