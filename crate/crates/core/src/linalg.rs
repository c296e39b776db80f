//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// A lower Cholesky factor together with the diagonal jitter that made the
/// factorization succeed.
#[derive(Clone, Debug)]
pub struct JitteredFactor {
    pub l: DMatrix<f64>,
    pub jitter: f64,
}

impl JitteredFactor {
    /// log|K| of the jittered matrix.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// L⁻¹ B
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.l.solve_lower_triangular_mut(&mut out);
        out
    }

    /// L⁻ᵀ B
    pub fn solve_upper(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = b.clone();
        self.l.tr_solve_lower_triangular_mut(&mut out);
        out
    }

    /// K⁻¹ B
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.l.nrows();
        self.solve(&DMatrix::identity(n, n))
    }
}

/// Factor `k + jitter·I`, starting at `base_jitter` and escalating ×10 up to
/// `max_jitter`. The base jitter is always applied.
pub fn cholesky_with_jitter(
    k: &DMatrix<f64>,
    base_jitter: f64,
    max_jitter: f64,
    what: &'static str,
) -> Result<JitteredFactor> {
    let n = k.nrows();
    let mut jitter = base_jitter;
    loop {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if kj.iter().all(|v| v.is_finite()) {
            if let Some(chol) = Cholesky::<f64, Dyn>::new(kj) {
                return Ok(JitteredFactor {
                    l: chol.l(),
                    jitter,
                });
            }
        }
        if jitter >= max_jitter * (1.0 - 1e-12) {
            return Err(Error::Factorization {
                what,
                jitter,
                condition: condition_estimate(k),
            });
        }
        jitter = if jitter > 0.0 {
            (jitter * 10.0).min(max_jitter)
        } else {
            max_jitter * 1e-4
        };
    }
}

/// Plain Cholesky with no jitter.
pub fn cholesky(k: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if !k.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} contains non-finite entries")));
    }
    Cholesky::<f64, Dyn>::new(k.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Factorization {
            what,
            jitter: 0.0,
            condition: condition_estimate(k),
        })
}

/// |λ_max| / |λ_min| of the symmetric part; infinite when singular or non-finite.
pub fn condition_estimate(k: &DMatrix<f64>) -> f64 {
    if !k.iter().all(|v| v.is_finite()) {
        return f64::INFINITY;
    }
    let sym = (k + k.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn trace_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // tr(A B) = Σ_ij A_ij B_ji
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
