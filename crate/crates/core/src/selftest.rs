//! Quick oracle suites behind the `selftest` command: each compares a closed
//! form against an independent reference from [`crate::oracle`] on a few
//! random instances.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bound::{bound_gradient, collapsed_bound, likelihood_terms};
use crate::harness::mackey_glass::{mackey_glass_simulate, MackeyGlassConfig};
use crate::kernel::{psi0, psi1, psi2, GaussianInputDistribution, InducingSet, KernelParams, Mask, PEAKED_VARIANCE};
use crate::model::{ModelState, ParamGroups, Posterior};
use crate::oracle::{central_difference, dense_log_marginal, mc_predictive_moments, mc_psi};
use crate::rng::{child_seed, stream, Stream};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

fn kernel(rng: &mut ChaCha8Rng, q: usize) -> KernelParams {
    KernelParams::new(
        uniform(rng, 0.5, 2.0),
        (0..q).map(|_| uniform(rng, 0.6, 2.0)).collect(),
        uniform(rng, 0.5, 4.0),
    )
    .expect("valid random kernel")
}

fn state(rng: &mut ChaCha8Rng) -> ModelState {
    let (q, n, m, d) = (rng.gen_range(1..=3), rng.gen_range(3..=8), 3, rng.gen_range(1..=2));
    let mask = Mask::from_fn(n, q, |_, _| rng.gen_bool(0.4));
    let vars = DMatrix::from_fn(n, q, |r, c| if mask.get(r, c) { PEAKED_VARIANCE } else { uniform(rng, 0.1, 1.0) });
    let qd = GaussianInputDistribution::new(matrix(rng, n, q), vars, mask).expect("valid inputs");
    let p = kernel(rng, q);
    let z = InducingSet::new(matrix(rng, m, q)).expect("valid inducing set");
    ModelState::new(p, z, qd, matrix(rng, n, d)).expect("valid state")
}

fn psi_suite(seed: u64) -> SuiteResult {
    let mut rng = stream(seed, Stream::Oracle);
    let mut worst: f64 = 0.0;
    for inst in 0..3 {
        let (q, n, m) = (2, 4, 3);
        let p = kernel(&mut rng, q);
        let s = DMatrix::from_fn(n, q, |_, _| uniform(&mut rng, 0.05, 1.0));
        let qd = GaussianInputDistribution::latent(matrix(&mut rng, n, q), s).expect("valid inputs");
        let z = matrix(&mut rng, m, q);
        let (w1, w2) = (matrix(&mut rng, n, m), matrix(&mut rng, m, m));
        let u = InducingSet::new(z.clone()).expect("valid inducing set");
        let mc = mc_psi(&qd, &z, &p, &w1, &w2, 200_000, child_seed(seed, inst));
        let closed = [
            (psi0(&qd, &p).expect("psi0"), mc.psi0, mc.psi0_se),
            (psi1(&qd, &u, &p).expect("psi1").component_mul(&w1).sum(), mc.proj1, mc.proj1_se),
            (psi2(&qd, &u, &p).expect("psi2").component_mul(&w2).sum(), mc.proj2, mc.proj2_se),
        ];
        for (c, e, se) in closed {
            // Summation rounding of the MC mean bounds how small an SE can matter.
            let rounding = 200_000.0 * f64::EPSILON * c.abs().max(1.0);
            worst = worst.max(((c - e).abs() - rounding).max(0.0) / se.max(rounding));
        }
    }
    SuiteResult {
        name: "psi statistics vs Monte Carlo",
        pass: worst < 4.0,
        detail: format!("worst deviation {worst:.2} standard errors (limit 4)"),
    }
}

fn gradient_suite(seed: u64) -> SuiteResult {
    let mut rng = stream(seed, Stream::Oracle);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let s = state(&mut rng);
        let packing = s.packing(ParamGroups::ALL);
        let x0 = packing.pack(&s);
        let g = bound_gradient(&s, ParamGroups::ALL).expect("gradient").values;
        let mut scratch = s.clone();
        let fd = central_difference(
            |x| {
                packing.unpack(&mut scratch, x);
                collapsed_bound(&scratch).expect("bound").total
            },
            &x0,
            1e-5,
        );
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(num / den);
    }
    SuiteResult {
        name: "bound gradient vs finite differences",
        pass: worst < 1e-4,
        detail: format!("worst relative error {worst:.2e} (limit 1e-4)"),
    }
}

fn exact_suite(seed: u64) -> SuiteResult {
    let mut rng = stream(seed, Stream::Oracle);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let (q, n, d) = (2, 8, 2);
        let p = kernel(&mut rng, q);
        let x = matrix(&mut rng, n, q) * 1.5;
        let y = matrix(&mut rng, n, d);
        let qd = GaussianInputDistribution::latent(x.clone(), DMatrix::zeros(n, q)).expect("valid inputs");
        let s = ModelState::new(p.clone(), InducingSet::new(x.clone()).expect("valid"), qd, y.clone()).expect("state");
        let (fit, trace) = likelihood_terms(&s).expect("likelihood terms");
        // The K_uu jitter j moves the value by at most β·N·D·j.
        let scale = p.noise_precision * (n * d) as f64 * p.jitter();
        worst = worst.max((fit + trace - dense_log_marginal(&x, &y, &p)).abs() / scale);
    }
    SuiteResult {
        name: "inducing inputs at the data vs exact GP",
        pass: worst <= 1.0,
        detail: format!("worst |error| / (β·N·D·jitter) = {worst:.3} (limit 1)"),
    }
}

fn prediction_suite(seed: u64) -> SuiteResult {
    let mut rng = stream(seed, Stream::Oracle);
    let mut worst: f64 = 0.0;
    for inst in 0..2 {
        let s = state(&mut rng);
        let post = Posterior::new(&s).expect("posterior");
        let mean: Vec<f64> = (0..s.q()).map(|_| normal(&mut rng)).collect();
        let var = vec![0.2; s.q()];
        let closed = post.uncertain(&mean, &var, false).expect("uncertain prediction");
        let (m, v) = mc_predictive_moments(
            |x| {
                let g = post.deterministic(x, false).expect("prediction");
                (g.mean, g.variance)
            },
            &mean,
            &var,
            100_000,
            child_seed(seed, inst),
        );
        for j in 0..s.d() {
            let scale = v[j].sqrt();
            worst = worst.max((closed.mean[j] - m[j]).abs() / scale);
            worst = worst.max((closed.variance[j] - v[j]).abs() / v[j]);
        }
    }
    SuiteResult {
        name: "uncertain-input prediction vs Monte Carlo",
        pass: worst < 0.01,
        detail: format!("worst relative error {worst:.2e} (limit 1e-2)"),
    }
}

fn mackey_glass_suite() -> SuiteResult {
    let coarse = MackeyGlassConfig {
        length: 200,
        ..MackeyGlassConfig::default()
    };
    let fine = MackeyGlassConfig { step: 0.01, ..coarse.clone() };
    let detail;
    let pass = match (mackey_glass_simulate(&coarse), mackey_glass_simulate(&fine)) {
        (Ok(a), Ok(b)) => {
            let sup = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            detail = format!("step 0.1 vs 0.01 sup-norm {sup:.2e} over 200 units (limit 1e-3)");
            sup < 1e-3
        }
        (Err(e), _) | (_, Err(e)) => {
            detail = e.to_string();
            false
        }
    };
    SuiteResult {
        name: "Mackey-Glass step refinement",
        pass,
        detail,
    }
}

/// Run every suite; results in a fixed order.
pub fn run_selftest(seed: u64) -> Vec<SuiteResult> {
    vec![
        psi_suite(child_seed(seed, 1)),
        gradient_suite(child_seed(seed, 2)),
        exact_suite(child_seed(seed, 3)),
        prediction_suite(child_seed(seed, 4)),
        mackey_glass_suite(),
    ]
}
