use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};
use crate::kernel::Mask;

/// Inputs with a per-entry observation mask and outputs with a per-row label
/// mask. Unobserved input entries hold NaN.
///
/// A row is in the fully observed set O iff its input mask row is all true.
/// The label mask is independent and only used by the classification path.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedDataset {
    pub inputs: DMatrix<f64>,
    pub input_mask: Mask,
    pub outputs: DMatrix<f64>,
    pub label_mask: Vec<bool>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
    pub seed: Option<u64>,
}

impl MaskedDataset {
    pub fn new(
        mut inputs: DMatrix<f64>,
        input_mask: Mask,
        outputs: DMatrix<f64>,
        label_mask: Vec<bool>,
    ) -> Result<Self> {
        let n = inputs.nrows();
        check_dim("input mask rows", n, input_mask.rows())?;
        check_dim("input mask cols", inputs.ncols(), input_mask.cols())?;
        check_dim("output rows", n, outputs.nrows())?;
        check_dim("label mask length", n, label_mask.len())?;
        for r in 0..n {
            for c in 0..inputs.ncols() {
                if !input_mask.get(r, c) {
                    inputs[(r, c)] = f64::NAN;
                } else if !inputs[(r, c)].is_finite() {
                    return Err(Error::NonFinite(format!("observed input ({r},{c})")));
                }
            }
        }
        let input_names = (0..inputs.ncols()).map(|q| format!("x{q}")).collect();
        let output_names = (0..outputs.ncols()).map(|d| format!("y{d}")).collect();
        Ok(Self {
            inputs,
            input_mask,
            outputs,
            label_mask,
            input_names,
            output_names,
            seed: None,
        })
    }

    pub fn fully_observed(inputs: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        let mask = Mask::filled(inputs.nrows(), inputs.ncols(), true);
        let labels = vec![true; inputs.nrows()];
        Self::new(inputs, mask, outputs, labels)
    }

    /// No observed inputs: every input dimension is latent.
    pub fn latent(n: usize, q: usize, outputs: DMatrix<f64>) -> Result<Self> {
        Self::new(
            DMatrix::from_element(n, q, f64::NAN),
            Mask::filled(n, q, false),
            outputs,
            vec![true; n],
        )
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn q(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn d(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn observed_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|r| self.input_mask.row(*r).iter().all(|b| *b)).collect()
    }

    pub fn partial_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|r| !self.input_mask.row(*r).iter().all(|b| *b)).collect()
    }

    pub fn labelled_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|r| self.label_mask[*r]).collect()
    }

    pub fn unlabelled_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|r| !self.label_mask[*r]).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(rows),
            input_mask: self.input_mask.select_rows(rows),
            outputs: self.outputs.select_rows(rows),
            label_mask: rows.iter().map(|r| self.label_mask[*r]).collect(),
            input_names: self.input_names.clone(),
            output_names: self.output_names.clone(),
            seed: self.seed,
        }
    }

    /// Observed entries of an input row; `None` where missing.
    pub fn input_row(&self, r: usize) -> Vec<Option<f64>> {
        (0..self.q())
            .map(|c| self.input_mask.get(r, c).then(|| self.inputs[(r, c)]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_sets_follow_mask() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mask = Mask::from_rows(&[vec![true, true], vec![true, false], vec![false, false]]).unwrap();
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let ds = MaskedDataset::new(x, mask, y, vec![true, false, true]).unwrap();
        assert_eq!(ds.observed_rows(), vec![0]);
        assert_eq!(ds.partial_rows(), vec![1, 2]);
        assert_eq!(ds.unlabelled_rows(), vec![1]);
        assert!(ds.inputs[(1, 1)].is_nan());
        assert_eq!(ds.input_row(1), vec![Some(3.0), None]);
    }
}
