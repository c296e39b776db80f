use nalgebra::DMatrix;

use super::ModelState;
use crate::bound::{collapsed_terms, effective_variances, factor_kuu, kl_raw, Objective, Statistics};
use crate::error::{check_dim, Result};
use crate::kernel::{psi1_grads_raw, psi1_raw, psi2_grads_raw, psi2_raw, GaussianInputDistribution, KernelParams, Mask, PEAKED_VARIANCE};
use crate::linalg::JitteredFactor;
use crate::optim::{minimize, LbfgsConfig};

/// Floor on the initial variance of a free test-input dimension.
const MIN_INIT_VARIANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    pub q: GaussianInputDistribution,
    /// Test-extended bound at the returned point.
    pub bound: f64,
    /// False when the optimizer stopped without meeting its tolerance; `q`
    /// is then the best iterate found.
    pub converged: bool,
}

/// Training-side statistics reused across many test points.
pub struct LatentInference<'a> {
    state: &'a ModelState,
    kuu: JitteredFactor,
    psi1: DMatrix<f64>,
    psi2: DMatrix<f64>,
    psi0: f64,
    kl_train: f64,
    config: LbfgsConfig,
}

impl<'a> LatentInference<'a> {
    pub fn new(state: &'a ModelState) -> Result<Self> {
        state.validate()?;
        let p = &state.kernel;
        let z = &state.inducing.points;
        let mu = &state.q_input.means;
        let s = effective_variances(state);
        let kl_train = match state.objective {
            Objective::Variational => kl_raw(mu, &state.q_input.variances),
            Objective::Projected => 0.0,
        };
        Ok(Self {
            state,
            kuu: factor_kuu(z, p)?,
            psi1: psi1_raw(mu, &s, z, p),
            psi2: psi2_raw(mu, &s, z, p),
            psi0: state.n() as f64 * p.signal_variance,
            kl_train,
            config: LbfgsConfig {
                max_iterations: 200,
                rel_tol: 1e-10,
                ..LbfgsConfig::default()
            },
        })
    }

    /// q(x*) maximizing the bound extended by one test row.
    ///
    /// `y_star` is in original output units with `None` for missing
    /// dimensions; `clamp` holds observed test-input entries, which stay at
    /// their value with the peaked variance.
    pub fn infer(&self, y_star: &[Option<f64>], clamp: &[Option<f64>]) -> Result<LatentPosterior> {
        let st = self.state;
        check_dim("test output", st.d(), y_star.len())?;
        check_dim("test input clamp", st.q(), clamp.len())?;
        let qd = st.q();
        let fixed = Mask::from_fn(1, qd, |_, c| clamp[c].is_some());
        let clamp_mean = |c: usize| clamp[c].unwrap_or(0.0);
        let free: Vec<usize> = (0..qd).filter(|c| clamp[*c].is_none()).collect();

        let obs: Vec<usize> = (0..st.d()).filter(|d| y_star[*d].is_some()).collect();
        if obs.is_empty() {
            // Only the KL term depends on x*, so the optimum is the prior.
            let means = DMatrix::from_fn(1, qd, |_, c| clamp_mean(c));
            let vars = DMatrix::from_fn(1, qd, |_, c| if clamp[c].is_some() { PEAKED_VARIANCE } else { 1.0 });
            let bound = -kl_raw(&means, &vars) - self.kl_train;
            return Ok(LatentPosterior {
                q: GaussianInputDistribution::new(means, vars, fixed)?,
                bound,
                converged: true,
            });
        }
        let y_obs: Vec<f64> = obs
            .iter()
            .map(|&d| y_star[d].expect("observed") - st.output_offset[d])
            .collect();
        let y_train = st.train_outputs.select_columns(&obs);
        let y_row = DMatrix::from_row_slice(1, obs.len(), &y_obs);

        // Start from the training point whose outputs are nearest.
        let nearest = (0..st.n())
            .map(|n| {
                let d2: f64 = (0..obs.len()).map(|j| (y_train[(n, j)] - y_obs[j]).powi(2)).sum();
                (n, d2)
            })
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0;
        let mut x0 = Vec::with_capacity(2 * free.len());
        x0.extend(free.iter().map(|&c| st.q_input.means[(nearest, c)]));
        x0.extend(
            free.iter()
                .map(|&c| st.q_input.variances[(nearest, c)].max(MIN_INIT_VARIANCE).ln()),
        );

        let p_train = self.psi1.transpose() * &y_train;
        let yy_train = y_train.norm_squared();
        let p = &st.kernel;
        let z = &st.inducing.points;

        let unpack = |x: &[f64]| {
            let mut mu = DMatrix::from_fn(1, qd, |_, c| clamp_mean(c));
            let mut s = DMatrix::from_element(1, qd, PEAKED_VARIANCE);
            for (j, &c) in free.iter().enumerate() {
                mu[(0, c)] = x[j];
                s[(0, c)] = x[free.len() + j].exp();
            }
            (mu, s)
        };
        let eval = |x: &[f64], want: bool| -> Option<(f64, Vec<f64>)> {
            let (mu, s) = unpack(x);
            let s_lik = match st.objective {
                Objective::Variational => s.clone(),
                Objective::Projected => DMatrix::zeros(1, qd),
            };
            let psi1 = psi1_raw(&mu, &s_lik, z, p);
            let psi2 = psi2_raw(&mu, &s_lik, z, p);
            let stats = Statistics {
                psi0: self.psi0 + p.signal_variance,
                p: &p_train + psi1.transpose() * &y_row,
                psi2: &self.psi2 + &psi2,
                yy: yy_train + y_row.norm_squared(),
                n: st.n() + 1,
            };
            let (terms, adj) = collapsed_terms(&stats, &self.kuu, p.noise_precision, st.objective, want).ok()?;
            let kl = kl_raw(&mu, &s);
            let f = terms.data_fit + terms.trace_correction - kl - self.kl_train;
            if !f.is_finite() {
                return None;
            }
            let mut grad = Vec::new();
            if let Some(adj) = adj {
                let dpsi1 = &y_row * adj.p.transpose();
                let (g1, g2) = grads(&mu, &s_lik, z, p, &dpsi1, &adj.psi2);
                grad = vec![0.0; 2 * free.len()];
                for (j, &c) in free.iter().enumerate() {
                    grad[j] = g1.means[(0, c)] + g2.means[(0, c)] - mu[(0, c)];
                    let sv = s[(0, c)];
                    let mut gs = -0.5 * (1.0 - 1.0 / sv);
                    if st.objective == Objective::Variational {
                        gs += g1.variances[(0, c)] + g2.variances[(0, c)];
                    }
                    grad[free.len() + j] = gs * sv;
                }
            }
            Some((f, grad))
        };

        let (x, bound, converged) = if free.is_empty() {
            let f = eval(&x0, false).map(|r| r.0).unwrap_or(f64::NEG_INFINITY);
            (x0, f, true)
        } else {
            match minimize(
                |x| eval(x, true).map(|(f, g)| (-f, g.into_iter().map(|v| -v).collect())),
                &x0,
                &self.config,
            ) {
                Ok(r) => {
                    let converged = r.converged();
                    (r.x, -r.f, converged)
                }
                Err(e) => {
                    log::warn!("latent inference failed at its starting point: {e}");
                    (x0, f64::NEG_INFINITY, false)
                }
            }
        };
        if !converged {
            log::warn!("latent inference stopped before convergence");
        }
        let (mu, s) = unpack(&x);
        Ok(LatentPosterior {
            q: GaussianInputDistribution::new(mu, s, fixed)?,
            bound,
            converged,
        })
    }
}

fn grads(
    mu: &DMatrix<f64>,
    s: &DMatrix<f64>,
    z: &DMatrix<f64>,
    p: &KernelParams,
    dpsi1: &DMatrix<f64>,
    dpsi2: &DMatrix<f64>,
) -> (crate::kernel::KernelGrads, crate::kernel::KernelGrads) {
    (psi1_grads_raw(mu, s, z, p, dpsi1), psi2_grads_raw(mu, s, z, p, dpsi2))
}

/// One-shot form of [`LatentInference::infer`].
pub fn infer_latent_posterior(
    state: &ModelState,
    y_star: &[Option<f64>],
    clamp: &[Option<f64>],
) -> Result<LatentPosterior> {
    LatentInference::new(state)?.infer(y_star, clamp)
}
