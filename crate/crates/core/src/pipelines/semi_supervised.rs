use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::classifier::{ClassifierModel, DEFAULT_L2};
use crate::dataset::MaskedDataset;
use crate::error::{check_dim, Error, Result};
use crate::kernel::GaussianInputDistribution;
use crate::model::{train, FitConfig, FitReport, LatentInference, ModelState};
use crate::rng::{stream, Stream};

/// Samples drawn per labelled latent point.
pub const DEFAULT_NUM_SAMPLES: usize = 6;

#[derive(Clone, Debug)]
pub struct Embedding {
    /// GP-LVM with the observed data as its outputs.
    pub model: ModelState,
    pub report: FitReport,
}

impl Embedding {
    /// q(X), one row per dataset row.
    pub fn q(&self) -> &GaussianInputDistribution {
        &self.model.q_input
    }
}

/// Fit a Bayesian GP-LVM on every row's inputs (labelled or not), treating
/// them as outputs of a `latent_dim`-dimensional latent space.
pub fn semi_supervised_embed(dataset: &MaskedDataset, latent_dim: usize, config: &FitConfig) -> Result<Embedding> {
    if !dataset.input_mask.all() {
        return Err(Error::InvalidParameter("embedding needs fully observed inputs".into()));
    }
    if latent_dim == 0 || latent_dim >= dataset.q() {
        return Err(Error::InvalidParameter(format!(
            "latent dimension {latent_dim} must be in 1..{}",
            dataset.q()
        )));
    }
    let latent = MaskedDataset::latent(dataset.n(), latent_dim, dataset.inputs.clone())?;
    let (model, report) = train(&latent, config)?;
    Ok(Embedding { model, report })
}

/// Draw `num_samples` points from each q(x_n) (each inheriting label n) and
/// fit the classifier on them.
pub fn semi_supervised_train(
    q_labelled: &GaussianInputDistribution,
    labels: &[i64],
    num_samples: usize,
    seed: u64,
) -> Result<ClassifierModel> {
    check_dim("labels", q_labelled.n(), labels.len())?;
    if num_samples == 0 {
        return Err(Error::InvalidParameter("num_samples must be at least 1".into()));
    }
    let (n, q) = (q_labelled.n(), q_labelled.q());
    let mut rng = stream(seed, Stream::Sampling);
    let mut x = DMatrix::zeros(n * num_samples, q);
    let mut y = Vec::with_capacity(n * num_samples);
    for i in 0..n {
        for s in 0..num_samples {
            for c in 0..q {
                let e: f64 = rng.sample(StandardNormal);
                x[(i * num_samples + s, c)] = q_labelled.means[(i, c)] + q_labelled.variances[(i, c)].sqrt() * e;
            }
            y.push(labels[i]);
        }
    }
    ClassifierModel::fit(&x, &y, DEFAULT_L2)
}

/// Infer q(x*) from `z_star` through the embedding and classify its mean.
pub fn semi_supervised_predict(
    classifier: &ClassifierModel,
    embed_model: &ModelState,
    z_star: &[f64],
) -> Result<(i64, Vec<f64>)> {
    let mut out = semi_supervised_predict_batch(classifier, embed_model, &DMatrix::from_row_slice(1, z_star.len(), z_star))?;
    Ok(out.remove(0))
}

pub fn semi_supervised_predict_batch(
    classifier: &ClassifierModel,
    embed_model: &ModelState,
    z_star: &DMatrix<f64>,
) -> Result<Vec<(i64, Vec<f64>)>> {
    check_dim("test observation width", embed_model.d(), z_star.ncols())?;
    let ctx = LatentInference::new(embed_model)?;
    let clamp = vec![None; embed_model.q()];
    (0..z_star.nrows())
        .map(|r| {
            let y: Vec<Option<f64>> = z_star.row(r).iter().map(|v| Some(*v)).collect();
            let post = ctx.infer(&y, &clamp)?;
            let mean: Vec<f64> = post.q.means.row(0).iter().copied().collect();
            classifier.predict(&mean)
        })
        .collect()
}
