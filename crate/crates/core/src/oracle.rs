//! Independent reference computations used by the test suites and the
//! `selftest` command: Monte Carlo, finite differences, dense GP algebra and
//! numerical quadrature. Nothing here shares code with the closed forms it
//! checks beyond the plain kernel function `k(x, x')`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::kernel::{GaussianInputDistribution, KernelParams};
use crate::rng::{stream, Stream};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// k(x, x') evaluated directly.
pub fn rbf(x: &[f64], x2: &[f64], p: &KernelParams) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(x2)
        .zip(&p.lengthscales)
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    p.signal_variance * (-0.5 * r2).exp()
}

fn gram(x: &DMatrix<f64>, x2: &DMatrix<f64>, p: &KernelParams) -> DMatrix<f64> {
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let rows2: Vec<Vec<f64>> = x2.row_iter().map(|r| r.iter().copied().collect()).collect();
    DMatrix::from_fn(x.nrows(), x2.nrows(), |i, j| rbf(&rows[i], &rows2[j], p))
}

/// Monte Carlo estimates of the psi statistics with standard errors, plus
/// the projections `Σ W₁∘Ψ₁` and `Σ W₂∘Ψ₂` (single scalars whose standard
/// errors account for the correlation between entries).
#[derive(Clone, Debug)]
pub struct McPsi {
    pub psi0: f64,
    pub psi0_se: f64,
    pub psi1: DMatrix<f64>,
    pub psi1_se: DMatrix<f64>,
    pub psi2: DMatrix<f64>,
    pub psi2_se: DMatrix<f64>,
    pub proj1: f64,
    pub proj1_se: f64,
    pub proj2: f64,
    pub proj2_se: f64,
}

pub fn mc_psi(
    q: &GaussianInputDistribution,
    z: &DMatrix<f64>,
    p: &KernelParams,
    w1: &DMatrix<f64>,
    w2: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> McPsi {
    let (n, qd, m) = (q.n(), q.q(), z.nrows());
    let mut rng = stream(seed, Stream::Oracle);
    let zr: Vec<Vec<f64>> = z.row_iter().map(|r| r.iter().copied().collect()).collect();
    let s = samples as f64;
    let (mut psi0, mut psi0_var) = (0.0, 0.0);
    let mut psi1 = DMatrix::zeros(n, m);
    let mut psi1_se = DMatrix::zeros(n, m);
    let mut psi2 = DMatrix::zeros(m, m);
    let mut psi2_var = DMatrix::zeros(m, m);
    let (mut proj1, mut proj1_var, mut proj2, mut proj2_var) = (0.0, 0.0, 0.0, 0.0);
    let mut x = vec![0.0; qd];
    let mut k = vec![0.0; m];
    for i in 0..n {
        let mut s0 = (0.0, 0.0);
        let mut s1 = vec![(0.0, 0.0); m];
        let mut s2 = vec![(0.0, 0.0); m * m];
        let mut sp1 = (0.0, 0.0);
        let mut sp2 = (0.0, 0.0);
        for _ in 0..samples {
            for c in 0..qd {
                let e: f64 = rng.sample(StandardNormal);
                x[c] = q.means[(i, c)] + q.variances[(i, c)].sqrt() * e;
            }
            let kxx = rbf(&x, &x, p);
            s0.0 += kxx;
            s0.1 += kxx * kxx;
            let mut p1 = 0.0;
            for j in 0..m {
                k[j] = rbf(&x, &zr[j], p);
                s1[j].0 += k[j];
                s1[j].1 += k[j] * k[j];
                p1 += w1[(i, j)] * k[j];
            }
            sp1.0 += p1;
            sp1.1 += p1 * p1;
            let mut p2 = 0.0;
            for a in 0..m {
                for b in 0..m {
                    let v = k[a] * k[b];
                    s2[a * m + b].0 += v;
                    s2[a * m + b].1 += v * v;
                    p2 += w2[(a, b)] * v;
                }
            }
            sp2.0 += p2;
            sp2.1 += p2 * p2;
        }
        let var = |(a, b): (f64, f64)| ((b / s - (a / s).powi(2)).max(0.0)) / s;
        psi0 += s0.0 / s;
        psi0_var += var(s0);
        for j in 0..m {
            psi1[(i, j)] = s1[j].0 / s;
            psi1_se[(i, j)] = var(s1[j]).sqrt();
        }
        for a in 0..m {
            for b in 0..m {
                psi2[(a, b)] += s2[a * m + b].0 / s;
                psi2_var[(a, b)] += var(s2[a * m + b]);
            }
        }
        proj1 += sp1.0 / s;
        proj1_var += var(sp1);
        proj2 += sp2.0 / s;
        proj2_var += var(sp2);
    }
    McPsi {
        psi0,
        psi0_se: psi0_var.sqrt(),
        psi1,
        psi1_se,
        psi2,
        psi2_se: psi2_var.map(f64::sqrt),
        proj1,
        proj1_se: proj1_var.sqrt(),
        proj2,
        proj2_se: proj2_var.sqrt(),
    }
}

/// Central differences `(f(x + h eᵢ) − f(x − h eᵢ)) / 2h`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let fp = f(&xp);
            xp[i] = x[i] - h;
            let fm = f(&xp);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// |a − b| / max(|a|, |b|, floor).
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn log_gauss_zero_mean(y: &DMatrix<f64>, cov: &DMatrix<f64>) -> f64 {
    let n = cov.nrows();
    let chol = cov.clone().cholesky().expect("covariance is positive definite");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut total = 0.0;
    for d in 0..y.ncols() {
        let yd = y.column(d).into_owned();
        let a = chol.solve(&yd);
        total += -0.5 * (n as f64 * LN_2PI + logdet + yd.dot(&a));
    }
    total
}

/// Σ_d log N(y_d | 0, K(X,X) + β⁻¹ I), computed densely.
pub fn dense_log_marginal(x: &DMatrix<f64>, y: &DMatrix<f64>, p: &KernelParams) -> f64 {
    let mut k = gram(x, x, p);
    for i in 0..k.nrows() {
        k[(i, i)] += 1.0 / p.noise_precision;
    }
    log_gauss_zero_mean(y, &k)
}

/// Textbook Bayesian GP-LVM bound in terms of K_uu and A = K_uu + βΨ₂
/// (plain Cholesky solves and determinants, no whitening), using `jitter`
/// on the diagonal of K_uu.
pub fn gplvm_bound_reference(
    mu: &DMatrix<f64>,
    s: &DMatrix<f64>,
    z: &DMatrix<f64>,
    y: &DMatrix<f64>,
    p: &KernelParams,
    jitter: f64,
) -> f64 {
    let (n, qd) = mu.shape();
    let (m, d) = (z.nrows(), y.ncols());
    let beta = p.noise_precision;
    let sf2 = p.signal_variance;
    let mut kuu = gram(z, z, p);
    for i in 0..m {
        kuu[(i, i)] += jitter;
    }
    let mut psi1 = DMatrix::zeros(n, m);
    let mut psi2 = DMatrix::zeros(m, m);
    for i in 0..n {
        for a in 0..m {
            let mut v = sf2;
            for c in 0..qd {
                let l2 = p.lengthscales[c].powi(2);
                let sc = s[(i, c)];
                v *= (l2 / (l2 + sc)).sqrt() * (-0.5 * (mu[(i, c)] - z[(a, c)]).powi(2) / (l2 + sc)).exp();
            }
            psi1[(i, a)] = v;
            for b in 0..m {
                let mut w = sf2 * sf2;
                for c in 0..qd {
                    let l2 = p.lengthscales[c].powi(2);
                    let sc = s[(i, c)];
                    let zbar = 0.5 * (z[(a, c)] + z[(b, c)]);
                    w *= (l2 / (l2 + 2.0 * sc)).sqrt()
                        * (-(z[(a, c)] - z[(b, c)]).powi(2) / (4.0 * l2)).exp()
                        * (-(mu[(i, c)] - zbar).powi(2) / (l2 + 2.0 * sc)).exp();
                }
                psi2[(a, b)] += w;
            }
        }
    }
    let a_mat = &kuu + &psi2 * beta;
    let chol_a = a_mat.cholesky().expect("A positive definite");
    let chol_k = kuu.clone().cholesky().expect("Kuu positive definite");
    let logdet = |l: DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let yyt = (y.transpose() * y).trace();
    let py = psi1.transpose() * y;
    let quad = (py.transpose() * chol_a.solve(&py)).trace();
    let nd = (n * d) as f64;
    let dd = d as f64;
    let lik = -0.5 * nd * LN_2PI + 0.5 * nd * beta.ln() + 0.5 * dd * logdet(chol_k.l())
        - 0.5 * dd * logdet(chol_a.l())
        - 0.5 * beta * yyt
        + 0.5 * beta * beta * quad
        - 0.5 * beta * dd * (n as f64 * sf2)
        + 0.5 * beta * dd * chol_k.solve(&psi2).trace();
    let kl: f64 = mu
        .iter()
        .zip(s.iter())
        .map(|(m, v)| 0.5 * (v + m * m - 1.0 - v.ln()))
        .sum();
    lik - kl
}

/// Nodes and weights of `nodes`-point Gauss-Hermite quadrature for the
/// weight `exp(−t²)` (Golub-Welsch).
pub fn gauss_hermite(nodes: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::zeros(nodes, nodes);
    for i in 1..nodes {
        let b = (i as f64 / 2.0).sqrt();
        jac[(i, i - 1)] = b;
        jac[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..nodes)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// The uncollapsed bound with q(U) set to its optimum, each expectation
/// over q(x_n) done by 1-D Gauss-Hermite quadrature. Q must be 1.
pub fn uncollapsed_bound_quadrature(
    mu: &DMatrix<f64>,
    s: &DMatrix<f64>,
    z: &DMatrix<f64>,
    y: &DMatrix<f64>,
    p: &KernelParams,
    jitter: f64,
    nodes: usize,
) -> f64 {
    assert_eq!(mu.ncols(), 1, "quadrature oracle is one-dimensional");
    let (n, m, d) = (mu.nrows(), z.nrows(), y.ncols());
    let beta = p.noise_precision;
    let (t, w) = gauss_hermite(nodes);
    let kvec = |x: f64| DVector::from_fn(m, |a, _| rbf(&[x], &[z[(a, 0)]], p));
    let mut kuu = gram(z, z, p);
    for i in 0..m {
        kuu[(i, i)] += jitter;
    }
    let kuu_inv = kuu.clone().try_inverse().expect("Kuu invertible");

    // Expectations needed for the optimal q(U), by quadrature as well.
    let mut psi1 = DMatrix::zeros(n, m);
    let mut psi2 = DMatrix::zeros(m, m);
    for i in 0..n {
        for (ti, wi) in t.iter().zip(&w) {
            let x = mu[(i, 0)] + (2.0 * s[(i, 0)]).sqrt() * ti;
            let k = kvec(x);
            let wt = wi / std::f64::consts::PI.sqrt();
            for a in 0..m {
                psi1[(i, a)] += wt * k[a];
            }
            psi2 += &k * k.transpose() * wt;
        }
    }
    let a_inv = (&kuu + &psi2 * beta).try_inverse().expect("A invertible");
    let sigma_u = &kuu * &a_inv * &kuu;
    let means_u = &kuu * &a_inv * psi1.transpose() * y * beta;
    let c = &kuu_inv * &sigma_u * &kuu_inv;

    let mut expected = 0.0;
    for i in 0..n {
        for (ti, wi) in t.iter().zip(&w) {
            let x = mu[(i, 0)] + (2.0 * s[(i, 0)]).sqrt() * ti;
            let k = kvec(x);
            let wt = wi / std::f64::consts::PI.sqrt();
            let a = &kuu_inv * &k;
            let cond_var = p.signal_variance - k.dot(&a);
            let extra = k.dot(&(&c * &k));
            for dd in 0..d {
                let f_mean = a.dot(&means_u.column(dd));
                let r = y[(i, dd)] - f_mean;
                let ll = 0.5 * (beta.ln() - LN_2PI) - 0.5 * beta * r * r;
                expected += wt * (ll - 0.5 * beta * cond_var - 0.5 * beta * extra);
            }
        }
    }
    // KL[q(u_d) ‖ N(0, K_uu)] for every output column.
    let logdet_k = kuu.determinant().ln();
    let logdet_s = sigma_u.determinant().ln();
    let mut kl_u = 0.0;
    for dd in 0..d {
        let md = means_u.column(dd);
        kl_u += 0.5 * ((&kuu_inv * &sigma_u).trace() + md.dot(&(&kuu_inv * md)) - m as f64 + logdet_k - logdet_s);
    }
    let kl_x: f64 = mu
        .iter()
        .zip(s.iter())
        .map(|(m, v)| 0.5 * (v + m * m - 1.0 - v.ln()))
        .sum();
    expected - kl_u - kl_x
}

/// log ∫ N(y | 0, K(X) + β⁻¹I) Π_{free} N(x_f | 0, 1) dx_f for Q = D = 1,
/// with the rows listed in `free` integrated over a uniform grid on
/// [−span, span] (trapezoid rule) and all other rows fixed at `x`.
pub fn log_marginal_quadrature(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    free: &[usize],
    p: &KernelParams,
    span: f64,
    points: usize,
) -> f64 {
    assert_eq!(x.ncols(), 1, "quadrature oracle is one-dimensional");
    assert!(free.len() <= 2, "at most two integrated rows");
    let h = 2.0 * span / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| -span + i as f64 * h).collect();
    let log_prior = |v: f64| -0.5 * (LN_2PI + v * v);
    let mut terms = Vec::new();
    let mut xs = x.clone();
    let mut visit = |vals: &[f64], weight: f64| {
        for (r, v) in free.iter().zip(vals) {
            xs[(*r, 0)] = *v;
        }
        let lp: f64 = vals.iter().map(|v| log_prior(*v)).sum();
        terms.push(weight.ln() + lp + dense_log_marginal(&xs, y, p));
    };
    let tw = |i: usize| if i == 0 || i + 1 == points { 0.5 * h } else { h };
    match free.len() {
        0 => visit(&[], 1.0),
        1 => {
            for (i, g) in grid.iter().enumerate() {
                visit(&[*g], tw(i));
            }
        }
        _ => {
            for (i, g) in grid.iter().enumerate() {
                for (j, g2) in grid.iter().enumerate() {
                    visit(&[*g, *g2], tw(i) * tw(j));
                }
            }
        }
    }
    let max = terms.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
    max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Independently coded sparse GP (projected process / DTC) predictive mean
/// with inducing inputs `z` and exact training inputs `x`.
pub fn sparse_gp_mean(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    p: &KernelParams,
    jitter: f64,
    x_star: &DMatrix<f64>,
) -> DMatrix<f64> {
    let beta = p.noise_precision;
    let mut kuu = gram(z, z, p);
    for i in 0..kuu.nrows() {
        kuu[(i, i)] += jitter;
    }
    let kuf = gram(z, x, p);
    let sigma = (&kuu + &kuf * kuf.transpose() * beta)
        .try_inverse()
        .expect("sparse GP system invertible");
    gram(x_star, z, p) * sigma * kuf * y * beta
}

/// Pooled predictive moments under `x ~ N(mean, diag var)` by sampling:
/// E[m(x)] and E[v(x)] + Var[m(x)], per output dimension.
pub fn mc_predictive_moments(
    predict: impl Fn(&[f64]) -> (Vec<f64>, Vec<f64>),
    mean: &[f64],
    var: &[f64],
    samples: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream(seed, Stream::Oracle);
    let mut x = vec![0.0; mean.len()];
    let (m0, _) = predict(mean);
    let d = m0.len();
    let (mut s1, mut s2, mut sv) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for _ in 0..samples {
        for (i, xi) in x.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            *xi = mean[i] + var[i].sqrt() * e;
        }
        let (m, v) = predict(&x);
        for j in 0..d {
            s1[j] += m[j];
            s2[j] += m[j] * m[j];
            sv[j] += v[j];
        }
    }
    let s = samples as f64;
    let mu: Vec<f64> = s1.iter().map(|v| v / s).collect();
    let var_out = (0..d).map(|j| sv[j] / s + s2[j] / s - mu[j] * mu[j]).collect();
    (mu, var_out)
}
