use nalgebra::DMatrix;

use crate::dataset::MaskedDataset;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{GaussianInputDistribution, PEAKED_VARIANCE};
use crate::model::{fit, train, FitConfig, FitReport, LatentInference, LatentPosterior, ModelState};

/// How stage 2 turns the latent posterior of a partially observed row into
/// the initial free entries of stage 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImputationMode {
    /// Keep the inferred mean and variance; both are optimized in stage 3.
    Distribution,
    /// Keep the mean only with variance ε, held fixed in stage 3.
    PointEstimate,
}

#[derive(Clone, Debug)]
pub struct SemiDescribedResult {
    /// Model fit on the fully observed rows only.
    pub stage1: ModelState,
    pub stage1_report: FitReport,
    /// Latent posteriors for the partially observed rows, in row order.
    pub imputations: Vec<(usize, LatentPosterior)>,
    /// Final model over all rows. Equals `stage1` when every row is observed.
    pub model: ModelState,
    pub report: FitReport,
}

/// Two-stage learning with partially observed inputs.
///
/// 1. Fit on the rows whose inputs are fully observed.
/// 2. For every partially observed row, infer q(x_n) from its outputs with
///    the observed input entries clamped.
/// 3. Refit on all rows, starting the free entries at those posteriors.
pub fn semi_described_fit(dataset: &MaskedDataset, config: &FitConfig) -> Result<SemiDescribedResult> {
    semi_described_with(dataset, config, ImputationMode::Distribution)
}

pub(crate) fn semi_described_with(
    dataset: &MaskedDataset,
    config: &FitConfig,
    mode: ImputationMode,
) -> Result<SemiDescribedResult> {
    let observed = dataset.observed_rows();
    if observed.is_empty() {
        return Err(Error::EmptyInput("no fully observed input rows".into()));
    }
    if dataset.outputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("outputs must be fully observed".into()));
    }
    let (stage1, stage1_report) = train(&dataset.subset(&observed), config)?;
    semi_described_from_stage1(dataset, stage1, stage1_report, config, mode)
}

/// Stages 2 and 3 given a stage-1 model fit on `dataset.observed_rows()`.
/// Lets several methods share one stage-1 fit.
pub fn semi_described_from_stage1(
    dataset: &MaskedDataset,
    stage1: ModelState,
    stage1_report: FitReport,
    config: &FitConfig,
    mode: ImputationMode,
) -> Result<SemiDescribedResult> {
    check_dim("stage-1 input width", dataset.q(), stage1.q())?;
    check_dim("stage-1 output width", dataset.d(), stage1.d())?;
    let partial = dataset.partial_rows();
    if partial.is_empty() {
        return Ok(SemiDescribedResult {
            model: stage1.clone(),
            report: stage1_report.clone(),
            stage1,
            stage1_report,
            imputations: Vec::new(),
        });
    }

    let ctx = LatentInference::new(&stage1)?;
    let mut imputations = Vec::with_capacity(partial.len());
    for &r in &partial {
        let y: Vec<Option<f64>> = dataset.outputs.row(r).iter().map(|v| Some(*v)).collect();
        imputations.push((r, ctx.infer(&y, &dataset.input_row(r))?));
    }
    let (model, report) = stage3_fit(dataset, &stage1, &imputations, config, mode)?;
    Ok(SemiDescribedResult {
        stage1,
        stage1_report,
        imputations,
        model,
        report,
    })
}

/// Build the extended state from stage-1 parameters and stage-2 posteriors,
/// then optimize it.
pub fn stage3_fit(
    dataset: &MaskedDataset,
    stage1: &ModelState,
    imputations: &[(usize, LatentPosterior)],
    config: &FitConfig,
    mode: ImputationMode,
) -> Result<(ModelState, FitReport)> {
    let (n, q) = (dataset.n(), dataset.q());
    let mut means = DMatrix::zeros(n, q);
    let mut vars = DMatrix::from_element(n, q, PEAKED_VARIANCE);
    for r in dataset.observed_rows() {
        means.set_row(r, &dataset.inputs.row(r));
    }
    for (r, post) in imputations {
        for c in 0..q {
            if dataset.input_mask.get(*r, c) {
                means[(*r, c)] = dataset.inputs[(*r, c)];
            } else {
                means[(*r, c)] = post.q.means[(0, c)];
                if mode == ImputationMode::Distribution {
                    vars[(*r, c)] = post.q.variances[(0, c)];
                }
            }
        }
    }
    let q_input = GaussianInputDistribution::new(means, vars, dataset.input_mask.clone())?;
    let mut outputs = dataset.outputs.clone();
    for mut row in outputs.row_iter_mut() {
        row -= stage1.output_offset.transpose();
    }
    let state = ModelState {
        kernel: stage1.kernel.clone(),
        inducing: stage1.inducing.clone(),
        q_input,
        train_outputs: outputs,
        output_offset: stage1.output_offset.clone(),
        objective: stage1.objective,
        freeze_free_variances: mode == ImputationMode::PointEstimate,
        seed: config.seed,
    };
    state.validate()?;
    fit(&state, config)
}
