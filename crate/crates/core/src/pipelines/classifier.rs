use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::optim::{minimize, LbfgsConfig};

/// L2 penalty on the non-bias weights.
pub const DEFAULT_L2: f64 = 1e-3;

/// Multinomial logistic regression. Row k of `weights` is `[bias, w_1..Q]`
/// for `classes[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub weights: Vec<Vec<f64>>,
    pub classes: Vec<i64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl ClassifierModel {
    /// Minimize mean cross-entropy plus `λ/2 ‖W‖²` (bias excluded).
    pub fn fit(x: &DMatrix<f64>, labels: &[i64], l2: f64) -> Result<Self> {
        check_dim("labels", x.nrows(), labels.len())?;
        if x.nrows() == 0 {
            return Err(Error::EmptyInput("no training samples for the classifier".into()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier features".into()));
        }
        let mut classes = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::Degenerate("classifier needs at least two classes".into()));
        }
        let (n, q, k) = (x.nrows(), x.ncols(), classes.len());
        let targets: Vec<usize> = labels
            .iter()
            .map(|l| classes.binary_search(l).expect("class present"))
            .collect();
        let width = q + 1;
        let objective = |w: &[f64]| -> Option<(f64, Vec<f64>)> {
            let mut grad = vec![0.0; w.len()];
            let mut loss = 0.0;
            let mut z = vec![0.0; k];
            for i in 0..n {
                for (c, zc) in z.iter_mut().enumerate() {
                    let row = &w[c * width..(c + 1) * width];
                    *zc = row[0] + (0..q).map(|j| row[j + 1] * x[(i, j)]).sum::<f64>();
                }
                let max = z.iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v));
                let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - z[targets[i]];
                for c in 0..k {
                    let r = (z[c] - lse).exp() - if c == targets[i] { 1.0 } else { 0.0 };
                    grad[c * width] += r / n as f64;
                    for j in 0..q {
                        grad[c * width + j + 1] += r * x[(i, j)] / n as f64;
                    }
                }
            }
            loss /= n as f64;
            for c in 0..k {
                for j in 1..width {
                    let v = w[c * width + j];
                    loss += 0.5 * l2 * v * v;
                    grad[c * width + j] += l2 * v;
                }
            }
            loss.is_finite().then_some((loss, grad))
        };
        let cfg = LbfgsConfig {
            max_iterations: 1000,
            rel_tol: 1e-12,
            grad_tol: 1e-8,
            ..LbfgsConfig::default()
        };
        let r = minimize(objective, &vec![0.0; k * width], &cfg)?;
        Ok(Self {
            weights: r.x.chunks(width).map(|c| c.to_vec()).collect(),
            classes,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].len() - 1
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("classifier input", self.input_dim(), x.len())?;
        let mut z: Vec<f64> = self
            .weights
            .iter()
            .map(|w| w[0] + w[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        softmax_in_place(&mut z);
        Ok(z)
    }

    /// Most probable class (lowest class on ties) and the probabilities.
    pub fn predict(&self, x: &[f64]) -> Result<(i64, Vec<f64>)> {
        let p = self.predict_proba(x)?;
        let best = p
            .iter()
            .enumerate()
            .fold(0, |b, (i, v)| if *v > p[b] { i } else { b });
        Ok((self.classes[best], p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_blobs() {
        let x = DMatrix::from_row_slice(6, 1, &[-2.0, -1.5, -1.0, 1.0, 1.5, 2.0]);
        let labels = [0, 0, 0, 1, 1, 1];
        let m = ClassifierModel::fit(&x, &labels, DEFAULT_L2).unwrap();
        assert_eq!(m.predict(&[-3.0]).unwrap().0, 0);
        assert_eq!(m.predict(&[3.0]).unwrap().0, 1);
        let p = m.predict_proba(&[0.3]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(matches!(ClassifierModel::fit(&x, &[3, 3], DEFAULT_L2), Err(Error::Degenerate(_))));
    }
}
