//! Synthetic data generators.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::MaskedDataset;
use crate::error::{Error, Result};
use crate::kernel::{kern, KernelParams, Mask};
use crate::rng::{stream, Stream};

/// Parameters of the two-layer GP generator: inputs are GP draws over a
/// one-dimensional index in [0, 1], outputs are GP draws over those inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub input_lengthscale: f64,
    pub input_variance: f64,
    pub output_lengthscale: f64,
    pub output_variance: f64,
    pub noise_variance: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            input_lengthscale: 0.1,
            input_variance: 1.0,
            output_lengthscale: 3.0,
            output_variance: 1.0,
            noise_variance: 0.01,
        }
    }
}

fn sample_gp(k: &DMatrix<f64>, columns: usize, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    let scale = k.diagonal().max().max(1e-300);
    let mut kj = k.clone();
    for i in 0..n {
        kj[(i, i)] += 1e-8 * scale;
    }
    let l = kj
        .cholesky()
        .ok_or_else(|| Error::Degenerate("generator covariance is not positive definite".into()))?
        .l();
    let e = DMatrix::from_fn(n, columns, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(l * e)
}

/// N rows with Q inputs and D outputs. Rows are shuffled so that neighbours
/// on the index grid do not end up in contiguous blocks.
pub fn synth_gp_dataset(seed: u64, n: usize, q: usize, d: usize, params: &SynthParams) -> Result<MaskedDataset> {
    if n == 0 || q == 0 || d == 0 {
        return Err(Error::InvalidParameter("generator sizes must be positive".into()));
    }
    let mut rng = stream(seed, Stream::Data);
    let t = DMatrix::from_fn(n, 1, |i, _| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 });
    let kin = KernelParams::new(params.input_variance, vec![params.input_lengthscale], 1.0)?;
    let x = sample_gp(&kern(&t, &t, &kin)?, q, &mut rng)?;
    let kout = KernelParams::new(params.output_variance, vec![params.output_lengthscale; q], 1.0)?;
    let f = sample_gp(&kern(&x, &x, &kout)?, d, &mut rng)?;
    let noise = params.noise_variance.sqrt();
    let y = DMatrix::from_fn(n, d, |i, j| f[(i, j)] + noise * rng.sample::<f64, _>(StandardNormal));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut ds = MaskedDataset::fully_observed(x.select_rows(&order), y.select_rows(&order))?;
    ds.seed = Some(seed);
    Ok(ds)
}

/// Hide exactly round(fraction · cells) uniformly chosen input entries among
/// `target_rows`. Rows keep their identity even when fully hidden.
pub fn apply_missingness(
    dataset: &MaskedDataset,
    fraction: f64,
    seed: u64,
    target_rows: &[usize],
) -> Result<MaskedDataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidParameter(format!("missing fraction {fraction} outside [0, 1]")));
    }
    if let Some(r) = target_rows.iter().find(|r| **r >= dataset.n()) {
        return Err(Error::InvalidParameter(format!("target row {r} out of range")));
    }
    let q = dataset.q();
    let cells = target_rows.len() * q;
    let count = (fraction * cells as f64).round() as usize;
    let mut rng = stream(seed, Stream::Missingness);
    let mut mask = dataset.input_mask.clone();
    for cell in sample(&mut rng, cells, count).into_iter() {
        mask.set(target_rows[cell / q], cell % q, false);
    }
    let mut out = MaskedDataset::new(
        dataset.inputs.clone(),
        mask,
        dataset.outputs.clone(),
        dataset.label_mask.clone(),
    )?;
    out.input_names = dataset.input_names.clone();
    out.output_names = dataset.output_names.clone();
    out.seed = dataset.seed;
    Ok(out)
}

/// A labelled dataset: a 2-D latent made of `classes` curved clusters,
/// mapped to `obs_dim` dimensions by a random smooth map plus noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManifoldParams {
    pub classes: usize,
    pub obs_dim: usize,
    /// Spread of each cluster along its arc (radians).
    pub arc_spread: f64,
    /// Radial and angular jitter of latent points.
    pub latent_noise: f64,
    pub map_lengthscale: f64,
    pub noise_std: f64,
}

impl Default for ManifoldParams {
    fn default() -> Self {
        Self {
            classes: 3,
            obs_dim: 12,
            arc_spread: 1.0,
            latent_noise: 0.25,
            map_lengthscale: 0.8,
            noise_std: 0.5,
        }
    }
}

/// Rows with observations as inputs and class labels; returns the dataset,
/// labels and the latent coordinates that generated them.
pub fn synth_manifold_dataset(
    seed: u64,
    n: usize,
    params: &ManifoldParams,
) -> Result<(MaskedDataset, Vec<i64>, DMatrix<f64>)> {
    if n == 0 || params.classes < 2 || params.obs_dim < 3 {
        return Err(Error::InvalidParameter("manifold generator needs n > 0, ≥ 2 classes, ≥ 3 dims".into()));
    }
    let mut rng = stream(seed, Stream::Data);
    let k = params.classes;
    let mut latent = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        let theta = 2.0 * std::f64::consts::PI * c as f64 / k as f64
            + params.arc_spread * (2.0 * rng.gen::<f64>() - 1.0);
        let r = 1.5 + params.latent_noise * rng.sample::<f64, _>(StandardNormal);
        latent[(i, 0)] = r * theta.cos();
        latent[(i, 1)] = r * theta.sin();
        labels.push(c as i64);
    }
    // Random smooth map: a sum of RBF bumps at random centres with random
    // output weights, plus a random linear part.
    let centres = DMatrix::from_fn(20, 2, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
    let weights = DMatrix::from_fn(20, params.obs_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let linear = DMatrix::from_fn(2, params.obs_dim, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
    let kp = KernelParams::new(1.0, vec![params.map_lengthscale; 2], 1.0)?;
    let mut obs = kern(&latent, &centres, &kp)? * weights + &latent * linear;
    obs.apply(|v| *v += params.noise_std * rng.sample::<f64, _>(StandardNormal));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let obs = obs.select_rows(&order);
    let latent = latent.select_rows(&order);
    let labels: Vec<i64> = order.iter().map(|&i| labels[i]).collect();
    let y = DMatrix::from_fn(n, 1, |i, _| labels[i] as f64);
    let mut ds = MaskedDataset::new(obs, Mask::filled(n, params.obs_dim, true), y, vec![true; n])?;
    ds.output_names = vec!["label".into()];
    ds.seed = Some(seed);
    Ok((ds, labels, latent))
}

/// Standardize columns of `x` with the statistics of `reference` rows.
pub fn standardize_with(x: &DMatrix<f64>, mean: &DVector<f64>, std: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| (x[(r, c)] - mean[c]) / std[c])
}
