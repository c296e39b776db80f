//! JSON model files.
//!
//! ```text
//! {
//!   "format": "vcgp-model", "format_version": 1, "library_version": "0.1.0",
//!   "shapes": { "n": N, "q": Q, "d": D, "m": M },
//!   "objective": "variational" | "projected",
//!   "freeze_free_variances": bool, "seed": u64,
//!   "kernel": { "signal_variance": f64, "lengthscales": [Q], "noise_precision": f64 },
//!   "inducing": [[Q] × M],
//!   "means": [[Q] × N], "variances": [[Q] × N], "fixed_mask": [[bool; Q] × N],
//!   "train_outputs": [[D] × N],      // centered
//!   "output_offset": [D]
//! }
//! ```
//!
//! Matrices are stored row-major as arrays of rows.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ModelState;
use crate::bound::Objective;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{GaussianInputDistribution, InducingSet, KernelParams, Mask};

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "vcgp-model";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Shapes {
    pub n: usize,
    pub q: usize,
    pub d: usize,
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub format_version: u32,
    pub library_version: String,
    pub shapes: Shapes,
    pub objective: Objective,
    pub freeze_free_variances: bool,
    pub seed: u64,
    pub kernel: KernelParams,
    pub inducing: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub fixed_mask: Vec<Vec<bool>>,
    pub train_outputs: Vec<Vec<f64>>,
    pub output_offset: Vec<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix(rows: &[Vec<f64>], r: usize, c: usize, what: &'static str) -> Result<DMatrix<f64>> {
    check_dim(what, r, rows.len())?;
    for row in rows {
        check_dim(what, c, row.len())?;
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl From<&ModelState> for ModelFile {
    fn from(s: &ModelState) -> Self {
        Self {
            format: FORMAT_NAME.into(),
            format_version: FORMAT_VERSION,
            library_version: crate::VERSION.into(),
            shapes: Shapes {
                n: s.n(),
                q: s.q(),
                d: s.d(),
                m: s.m(),
            },
            objective: s.objective,
            freeze_free_variances: s.freeze_free_variances,
            seed: s.seed,
            kernel: s.kernel.clone(),
            inducing: rows(&s.inducing.points),
            means: rows(&s.q_input.means),
            variances: rows(&s.q_input.variances),
            fixed_mask: s.q_input.fixed_mask.to_rows(),
            train_outputs: rows(&s.train_outputs),
            output_offset: s.output_offset.iter().copied().collect(),
        }
    }
}

impl ModelFile {
    pub fn into_state(self) -> Result<ModelState> {
        if self.format != FORMAT_NAME {
            return Err(Error::Parse(format!("not a model file (format `{}`)", self.format)));
        }
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model format version {}",
                self.format_version
            )));
        }
        let Shapes { n, q, d, m } = self.shapes;
        let mask = Mask::from_rows(&self.fixed_mask)?;
        check_dim("fixed_mask rows", n, mask.rows())?;
        check_dim("fixed_mask cols", q, mask.cols())?;
        check_dim("output_offset", d, self.output_offset.len())?;
        let state = ModelState {
            kernel: self.kernel,
            inducing: InducingSet::new(matrix(&self.inducing, m, q, "inducing")?)?,
            q_input: GaussianInputDistribution::new(
                matrix(&self.means, n, q, "means")?,
                matrix(&self.variances, n, q, "variances")?,
                mask,
            )?,
            train_outputs: matrix(&self.train_outputs, n, d, "train_outputs")?,
            output_offset: DVector::from_vec(self.output_offset),
            objective: self.objective,
            freeze_free_variances: self.freeze_free_variances,
            seed: self.seed,
        };
        state.validate()?;
        Ok(state)
    }
}

impl ModelState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(text)?.into_state()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
