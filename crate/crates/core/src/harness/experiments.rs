//! Experiment orchestration.
//!
//! A config names one experiment and a list of seeds (one per trial). The
//! runner splits the work into independent units (a trial, or a trial at one
//! missing fraction), runs them in parallel and assembles the rows in unit
//! order, so the report does not depend on scheduling.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::mackey_glass::{mackey_glass_simulate, MackeyGlassConfig};
use super::metrics::{metrics, misclassified};
use super::report::{summarize, SummaryRow};
use super::synth::{apply_missingness, synth_gp_dataset, synth_manifold_dataset, ManifoldParams, SynthParams};
use crate::baselines::{
    fit_projected, gplvm_impute_from_stage1, mean_predictor, mlr_fit_predict, moment_matched_forecast,
    naive_ar_forecast, nn_predict, pca_features,
};
use crate::dataset::MaskedDataset;
use crate::error::{Error, Result};
use crate::model::{train, FitConfig, LatentInference, ModelState, Posterior, PredictiveGaussian};
use crate::pipelines::{
    autoregressive_reformat, iterative_forecast, semi_described_from_stage1, semi_supervised_embed,
    semi_supervised_train, ClassifierModel, ForecastConfig, ImputationMode, DEFAULT_L2,
};
use crate::rng::{child_seed, stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SemiDescribed,
    Forecast,
    SemiSupervised,
    DimStudy,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SemiDescribed => "semi-described",
            Self::Forecast => "forecast",
            Self::SemiSupervised => "semi-supervised",
            Self::DimStudy => "dim-study",
        }
    }

    /// Header of the swept-setting column in metric tables.
    pub fn setting_label(&self) -> &'static str {
        match self {
            Self::SemiDescribed | Self::DimStudy => "fraction",
            Self::Forecast => "horizon",
            Self::SemiSupervised => "size",
        }
    }
}

/// Simulated semi-described regression: rows split into fully observed,
/// partially observed and test sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiDescribedSetup {
    pub observed: usize,
    pub partial: usize,
    pub test: usize,
    pub q: usize,
    pub d: usize,
    pub generator: SynthParams,
}

impl Default for SemiDescribedSetup {
    fn default() -> Self {
        Self {
            observed: 40,
            partial: 60,
            test: 100,
            q: 15,
            d: 5,
            generator: SynthParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSetup {
    pub mackey_glass: MackeyGlassConfig,
    /// τ.
    pub window: usize,
    /// Leading points of the series used for training.
    pub train_points: usize,
    pub horizon: usize,
}

impl Default for ForecastSetup {
    fn default() -> Self {
        Self {
            mackey_glass: MackeyGlassConfig::default(),
            window: 18,
            train_points: 72,
            horizon: 1110,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiSupervisedSetup {
    pub train: usize,
    pub test: usize,
    pub latent_dim: usize,
    /// Labelled-set sizes; each trial's sets are nested.
    pub sizes: Vec<usize>,
    pub num_samples: usize,
    pub manifold: ManifoldParams,
}

impl Default for SemiSupervisedSetup {
    fn default() -> Self {
        Self {
            train: 250,
            test: 250,
            latent_dim: 2,
            sizes: vec![10, 20, 40, 80],
            num_samples: crate::pipelines::DEFAULT_NUM_SAMPLES,
            manifold: ManifoldParams::default(),
        }
    }
}

/// Semi-described regression over a grid of input and output widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimStudySetup {
    pub observed: usize,
    pub partial: usize,
    pub test: usize,
    pub qs: Vec<usize>,
    pub ds: Vec<usize>,
    pub generator: SynthParams,
}

impl Default for DimStudySetup {
    fn default() -> Self {
        Self {
            observed: 40,
            partial: 60,
            test: 100,
            qs: vec![5, 15],
            ds: vec![2, 10],
            generator: SynthParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub trials: usize,
    /// One seed per trial.
    pub seeds: Vec<u64>,
    /// Missing fractions (semi-described and dim-study).
    #[serde(default)]
    pub fractions: Vec<f64>,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub semi_described: SemiDescribedSetup,
    #[serde(default)]
    pub forecast: ForecastSetup,
    #[serde(default)]
    pub semi_supervised: SemiSupervisedSetup,
    #[serde(default)]
    pub dim_study: DimStudySetup,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl ExperimentConfig {
    /// Default settings for `kind`.
    pub fn preset(kind: ExperimentKind) -> Self {
        let (trials, fractions) = match kind {
            ExperimentKind::SemiDescribed => (4, (1..=10).map(|i| i as f64 / 10.0).collect()),
            ExperimentKind::Forecast => (1, Vec::new()),
            ExperimentKind::SemiSupervised => (8, Vec::new()),
            ExperimentKind::DimStudy => (2, vec![0.3, 0.6, 0.9]),
        };
        Self {
            experiment: kind,
            trials,
            seeds: (0..trials as u64).collect(),
            fractions,
            fit: FitConfig::default(),
            semi_described: SemiDescribedSetup::default(),
            forecast: ForecastSetup::default(),
            semi_supervised: SemiSupervisedSetup::default(),
            dim_study: DimStudySetup::default(),
        }
    }

    /// Parse JSON. Keys left out take the preset of the named experiment.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)?;
        let kind: ExperimentKind = serde_json::from_value(
            user.get("experiment")
                .cloned()
                .ok_or_else(|| Error::Parse("config needs an `experiment` field".into()))?,
        )?;
        let mut base = serde_json::to_value(Self::preset(kind))?;
        // Overriding trials alone re-derives the default seeds.
        if let (Some(t), None) = (user.get("trials").and_then(Value::as_u64), user.get("seeds")) {
            base["seeds"] = serde_json::to_value((0..t).collect::<Vec<u64>>())?;
        }
        merge(&mut base, user);
        let cfg: Self = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Replace the seeds by `first, first + 1, …` keeping the trial count.
    pub fn with_first_seed(mut self, first: u64) -> Self {
        self.seeds = (0..self.trials as u64).map(|i| first.wrapping_add(i)).collect();
        self
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_string(self)?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.trials != self.seeds.len() {
            return Err(Error::InvalidParameter(format!(
                "trials = {} but {} seeds given",
                self.trials,
                self.seeds.len()
            )));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::InvalidParameter(format!("missing fraction {f} outside [0, 1]")));
        }
        self.fit.validate()?;
        match self.experiment {
            ExperimentKind::SemiDescribed | ExperimentKind::DimStudy => {
                if self.fractions.is_empty() {
                    return Err(Error::InvalidParameter("no missing fractions given".into()));
                }
                let (o, u, t) = match self.experiment {
                    ExperimentKind::SemiDescribed => {
                        let s = &self.semi_described;
                        if s.q == 0 || s.d == 0 {
                            return Err(Error::InvalidParameter("q and d must be positive".into()));
                        }
                        (s.observed, s.partial, s.test)
                    }
                    _ => {
                        let s = &self.dim_study;
                        if s.qs.is_empty() || s.ds.is_empty() || s.qs.contains(&0) || s.ds.contains(&0) {
                            return Err(Error::InvalidParameter("dim-study grid needs positive widths".into()));
                        }
                        (s.observed, s.partial, s.test)
                    }
                };
                if o == 0 || t == 0 {
                    return Err(Error::InvalidParameter("observed and test sets must be non-empty".into()));
                }
                let _ = u;
            }
            ExperimentKind::Forecast => {
                let f = &self.forecast;
                f.mackey_glass.validate()?;
                if f.window == 0 || f.horizon == 0 || f.train_points <= f.window {
                    return Err(Error::InvalidParameter(
                        "forecast needs window ≥ 1, horizon ≥ 1 and more training points than the window".into(),
                    ));
                }
                if f.mackey_glass.length < f.train_points + f.horizon {
                    return Err(Error::InvalidParameter(format!(
                        "series length {} is shorter than train_points + horizon = {}",
                        f.mackey_glass.length,
                        f.train_points + f.horizon
                    )));
                }
            }
            ExperimentKind::SemiSupervised => {
                let s = &self.semi_supervised;
                if s.sizes.is_empty() || s.num_samples == 0 || s.test == 0 {
                    return Err(Error::InvalidParameter("semi-supervised setup needs sizes, samples and test rows".into()));
                }
                if let Some(l) = s.sizes.iter().find(|l| **l > s.train || **l < s.latent_dim.max(2)) {
                    return Err(Error::InvalidParameter(format!(
                        "labelled size {l} must lie in {}..={}",
                        s.latent_dim.max(2),
                        s.train
                    )));
                }
                if s.latent_dim == 0 || s.latent_dim >= s.manifold.obs_dim {
                    return Err(Error::InvalidParameter("latent_dim must be below the observation width".into()));
                }
            }
        }
        Ok(())
    }
}

/// One metric row. Failed runs carry `status = "failed: …"` and no values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub trial: usize,
    pub seed: u64,
    /// Extra grouping key (dim-study widths); empty otherwise.
    pub group: String,
    /// Missing fraction, labelled-set size or horizon.
    pub setting: f64,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub errors: Option<usize>,
    pub status: String,
}

impl MetricRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

/// One forecast step of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub method: String,
    pub trial: usize,
    pub seed: u64,
    pub step: usize,
    pub mean: f64,
    pub variance: f64,
    pub truth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub library_version: String,
    pub platform: String,
}

impl Provenance {
    pub fn for_config(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            config_hash: config.hash()?,
            seeds: config.seeds.clone(),
            library_version: crate::VERSION.to_string(),
            platform: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub experiment: ExperimentKind,
    pub config: ExperimentConfig,
    pub rows: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    pub traces: Vec<TraceRow>,
    pub provenance: Provenance,
}

#[derive(Clone, Debug)]
struct Ctx {
    trial: usize,
    seed: u64,
    group: String,
    setting: f64,
}

impl Ctx {
    fn row(&self, method: &str, outcome: Result<(Option<f64>, Option<f64>, Option<usize>)>) -> MetricRow {
        let (mae, mse, errors, status) = match outcome {
            Ok((a, s, e)) => (a, s, e, "ok".to_string()),
            Err(e) => {
                log::warn!(
                    "{method} failed (trial {}, seed {}, setting {}): {e}",
                    self.trial,
                    self.seed,
                    self.setting
                );
                (None, None, None, format!("failed: {e}"))
            }
        };
        MetricRow {
            method: method.to_string(),
            trial: self.trial,
            seed: self.seed,
            group: self.group.clone(),
            setting: self.setting,
            mae,
            mse,
            errors,
            status,
        }
    }

    fn regression(&self, method: &str, pred: Result<DMatrix<f64>>, truth: &DMatrix<f64>) -> MetricRow {
        self.row(
            method,
            pred.and_then(|p| metrics(&p, truth)).map(|m| (Some(m.mae), Some(m.mse), None)),
        )
    }

    fn failed_all(&self, methods: &[&str], e: &Error) -> Vec<MetricRow> {
        methods
            .iter()
            .map(|m| self.row(m, Err(Error::Upstream(format!("setup failed: {e}")))))
            .collect()
    }
}

/// Row-index sets of a semi-described split, as indices into the generated
/// dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub observed: Vec<usize>,
    pub partial: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// True when no row index appears in two sets.
    pub fn disjoint(&self) -> bool {
        let mut all: Vec<usize> = self.observed.iter().chain(&self.partial).chain(&self.test).copied().collect();
        let len = all.len();
        all.sort_unstable();
        all.dedup();
        all.len() == len
    }
}

/// Data shared by every method of one semi-described unit. Training rows
/// are the observed rows followed by the partially observed ones.
#[derive(Clone, Debug)]
pub struct SemiDescribedTask {
    pub split: Split,
    pub train: MaskedDataset,
    pub test_x: DMatrix<f64>,
    pub test_y: DMatrix<f64>,
}

impl SemiDescribedTask {
    pub fn observed_train_rows(&self) -> Vec<usize> {
        (0..self.split.observed.len()).collect()
    }

    pub fn partial_train_rows(&self) -> Vec<usize> {
        (self.split.observed.len()..self.train.n()).collect()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn semi_described_task(
    seed: u64,
    observed: usize,
    partial: usize,
    test: usize,
    q: usize,
    d: usize,
    generator: &SynthParams,
    fraction: f64,
    missingness_seed: u64,
) -> Result<SemiDescribedTask> {
    let total = observed + partial + test;
    let data = synth_gp_dataset(seed, total, q, d, generator)?;
    let mut perm: Vec<usize> = (0..total).collect();
    perm.shuffle(&mut stream(seed, Stream::Split));
    let split = Split {
        observed: perm[..observed].to_vec(),
        partial: perm[observed..observed + partial].to_vec(),
        test: perm[observed + partial..].to_vec(),
    };
    if !split.disjoint() {
        return Err(Error::Degenerate("split sets overlap".into()));
    }
    let train_rows: Vec<usize> = split.observed.iter().chain(&split.partial).copied().collect();
    let full_train = data.subset(&train_rows);
    let targets: Vec<usize> = (observed..observed + partial).collect();
    let train = apply_missingness(&full_train, fraction, missingness_seed, &targets)?;
    Ok(SemiDescribedTask {
        test_x: data.inputs.select_rows(&split.test),
        test_y: data.outputs.select_rows(&split.test),
        split,
        train,
    })
}

fn predict_rows(state: &ModelState, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let post = Posterior::new(state)?;
    let mut out = DMatrix::zeros(x.nrows(), state.d());
    for r in 0..x.nrows() {
        let row: Vec<f64> = x.row(r).iter().copied().collect();
        let p = post.deterministic(&row, false)?;
        for (c, v) in p.mean.iter().enumerate() {
            out[(r, c)] = *v;
        }
    }
    Ok(out)
}

pub const SEMI_DESCRIBED_METHODS: [&str; 6] = ["sd-gp", "gp", "gplvm", "mlr", "nn", "mean"];
pub const DIM_STUDY_METHODS: [&str; 2] = ["sd-gp", "gp"];
pub const FORECAST_METHODS: [&str; 3] = ["ours", "gp-uncert", "naive"];
pub const SEMI_SUPERVISED_METHODS: [&str; 3] = ["ours", "mean-only", "pca"];

/// All semi-described methods on one task. `methods` selects a subset of
/// [`SEMI_DESCRIBED_METHODS`], in that order.
fn run_semi_described_methods(task: &SemiDescribedTask, fit: &FitConfig, ctx: &Ctx, methods: &[&str]) -> Vec<MetricRow> {
    let want = |m: &str| methods.contains(&m);
    let truth = &task.test_y;
    let train = &task.train;
    let o_rows = task.observed_train_rows();
    let mut rows = Vec::new();

    // Standard GP on the observed set only. When no partial row came out
    // complete, this is also stage 1 of both two-stage methods.
    let gp = train_subset(train, &o_rows, fit);
    let stage1 = if train.observed_rows() == o_rows {
        reuse(&gp)
    } else {
        train_subset(train, &train.observed_rows(), fit)
    };
    if want("sd-gp") {
        let pred = reuse(&stage1).and_then(|(s, r)| {
            let res = semi_described_from_stage1(train, s, r, fit, ImputationMode::Distribution)?;
            predict_rows(&res.model, &task.test_x)
        });
        rows.push(ctx.regression("sd-gp", pred, truth));
    }
    if want("gp") {
        let pred = gp.and_then(|(s, _)| predict_rows(&s, &task.test_x));
        rows.push(ctx.regression("gp", pred, truth));
    }
    if want("gplvm") {
        let pred = stage1.and_then(|(s, r)| {
            let res = gplvm_impute_from_stage1(train, s, r, fit)?;
            predict_rows(&res.model, &task.test_x)
        });
        rows.push(ctx.regression("gplvm", pred, truth));
    }
    if want("mlr") {
        rows.push(ctx.regression("mlr", mlr_fit_predict(&train.inputs, &train.outputs, &task.test_x), truth));
    }
    if want("nn") {
        rows.push(ctx.regression(
            "nn",
            nn_predict(&train.inputs, &train.input_mask, &train.outputs, &task.test_x),
            truth,
        ));
    }
    if want("mean") {
        rows.push(ctx.regression("mean", mean_predictor(&train.outputs, truth.nrows()), truth));
    }
    rows
}

fn reuse<T: Clone>(r: &Result<T>) -> Result<T> {
    match r {
        Ok(v) => Ok(v.clone()),
        Err(e) => Err(Error::Upstream(e.to_string())),
    }
}

fn train_subset(ds: &MaskedDataset, rows: &[usize], fit: &FitConfig) -> Result<(ModelState, crate::model::FitReport)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no fully observed rows".into()));
    }
    train(&ds.subset(rows), fit)
}

/// Normalized Mackey-Glass data for one forecast run.
#[derive(Clone, Debug)]
pub struct ForecastTask {
    /// Training (window, next value) pairs.
    pub dataset: MaskedDataset,
    /// The last `window` training points, oldest first.
    pub seed_window: Vec<f64>,
    /// The `horizon` points following the training segment.
    pub truth: Vec<f64>,
    /// Mean and standard deviation of the training segment.
    pub mean: f64,
    pub std: f64,
}

/// Simulate, standardize with the statistics of the training segment and
/// build the auto-regressive training pairs.
pub fn forecast_task(setup: &ForecastSetup) -> Result<ForecastTask> {
    let series = mackey_glass_simulate(&setup.mackey_glass)?;
    let t = setup.train_points;
    if series.len() < t + setup.horizon {
        return Err(Error::InvalidParameter("series too short for the requested horizon".into()));
    }
    let train = &series[..t];
    let mean = train.iter().sum::<f64>() / t as f64;
    let std = (train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
    if !(std > 0.0) {
        return Err(Error::Degenerate("training segment is constant".into()));
    }
    let norm: Vec<f64> = series.iter().map(|v| (v - mean) / std).collect();
    let (x, y) = autoregressive_reformat(&DMatrix::from_column_slice(t, 1, &norm[..t]), setup.window)?;
    Ok(ForecastTask {
        dataset: MaskedDataset::fully_observed(x, y)?,
        seed_window: norm[t - setup.window..t].to_vec(),
        truth: norm[t..t + setup.horizon].to_vec(),
        mean,
        std,
    })
}

fn forecast_unit(config: &ExperimentConfig, ctx: &Ctx) -> (Vec<MetricRow>, Vec<TraceRow>) {
    let setup = &config.forecast;
    let fit = FitConfig {
        seed: ctx.seed,
        ..config.fit.clone()
    };
    let task = match forecast_task(setup) {
        Ok(t) => t,
        Err(e) => return (ctx.failed_all(&FORECAST_METHODS, &e), Vec::new()),
    };
    let fc = ForecastConfig {
        window: setup.window,
        horizon: setup.horizon,
        propagate_uncertainty: true,
        include_noise: true,
    };
    let ours_model = train(&task.dataset, &fit).map(|r| r.0);
    let runs: Vec<(&str, Result<Vec<PredictiveGaussian>>)> = vec![
        (
            "ours",
            reuse(&ours_model).and_then(|s| iterative_forecast(&s, &task.seed_window, &fc)),
        ),
        (
            "gp-uncert",
            fit_projected(&task.dataset, &fit).and_then(|(s, _)| moment_matched_forecast(&s, &task.seed_window, &fc)),
        ),
        (
            "naive",
            ours_model.and_then(|s| naive_ar_forecast(&s, &task.seed_window, setup.window, setup.horizon)),
        ),
    ];
    let truth = DMatrix::from_column_slice(task.truth.len(), 1, &task.truth);
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (method, out) in runs {
        match out {
            Ok(preds) => {
                let means = DMatrix::from_iterator(preds.len(), 1, preds.iter().map(|p| p.mean[0]));
                rows.push(ctx.regression(method, Ok(means), &truth));
                traces.extend(preds.iter().enumerate().map(|(step, p)| TraceRow {
                    method: method.to_string(),
                    trial: ctx.trial,
                    seed: ctx.seed,
                    step,
                    mean: p.mean[0],
                    variance: p.variance[0],
                    truth: task.truth[step],
                }));
            }
            Err(e) => rows.push(ctx.row(method, Err(e))),
        }
    }
    (rows, traces)
}

/// Labelled training rows: classes are visited round-robin, each in a
/// seeded random order, and the first `size` picks are labelled. Sets for
/// increasing sizes are nested.
pub fn labelled_order(labels: &[i64], seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, Stream::Split);
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut pools: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| {
            let mut rows: Vec<usize> = (0..labels.len()).filter(|r| labels[*r] == *c).collect();
            rows.shuffle(&mut rng);
            rows.reverse();
            rows
        })
        .collect();
    let mut out = Vec::with_capacity(labels.len());
    while out.len() < labels.len() {
        for pool in pools.iter_mut() {
            if let Some(r) = pool.pop() {
                out.push(r);
            }
        }
    }
    out
}

fn semi_supervised_unit(config: &ExperimentConfig, ctx: &Ctx) -> Vec<MetricRow> {
    let setup = &config.semi_supervised;
    let fit = FitConfig {
        seed: ctx.seed,
        ..config.fit.clone()
    };
    let fail_sizes = |e: &Error| -> Vec<MetricRow> {
        setup
            .sizes
            .iter()
            .flat_map(|l| {
                Ctx {
                    setting: *l as f64,
                    ..ctx.clone()
                }
                .failed_all(&SEMI_SUPERVISED_METHODS, e)
            })
            .collect()
    };
    let prepared = (|| -> Result<_> {
        let (data, labels, _) = synth_manifold_dataset(ctx.seed, setup.train + setup.test, &setup.manifold)?;
        let train_rows: Vec<usize> = (0..setup.train).collect();
        let test_rows: Vec<usize> = (setup.train..data.n()).collect();
        let train_ds = data.subset(&train_rows);
        let embedding = semi_supervised_embed(&train_ds, setup.latent_dim, &fit)?;
        let ctx_inf = LatentInference::new(&embedding.model)?;
        let clamp = vec![None; setup.latent_dim];
        let mut test_means = DMatrix::zeros(test_rows.len(), setup.latent_dim);
        for (i, &r) in test_rows.iter().enumerate() {
            let y: Vec<Option<f64>> = data.inputs.row(r).iter().map(|v| Some(*v)).collect();
            let post = ctx_inf.infer(&y, &clamp)?;
            test_means.set_row(i, &post.q.means.row(0));
        }
        let train_labels = labels[..setup.train].to_vec();
        let test_labels = labels[setup.train..].to_vec();
        let order = labelled_order(&train_labels, ctx.seed);
        Ok((data, train_labels, test_labels, embedding, test_means, order, test_rows))
    })();
    let (data, train_labels, test_labels, embedding, test_means, order, test_rows) = match prepared {
        Ok(p) => p,
        Err(e) => return fail_sizes(&e),
    };
    let test_obs = data.inputs.select_rows(&test_rows);
    let classify = |clf: &ClassifierModel, x: &DMatrix<f64>| -> Result<usize> {
        let pred = (0..x.nrows())
            .map(|r| clf.predict(&x.row(r).iter().copied().collect::<Vec<_>>()).map(|p| p.0))
            .collect::<Result<Vec<_>>>()?;
        misclassified(&pred, &test_labels)
    };
    let count = |e: usize| (None, None, Some(e));
    let mut rows = Vec::new();
    for &size in &setup.sizes {
        let c = Ctx {
            setting: size as f64,
            ..ctx.clone()
        };
        let lab = &order[..size];
        let lab_labels: Vec<i64> = lab.iter().map(|r| train_labels[*r]).collect();
        let q_lab = embedding.q().select_rows(lab);
        let sample_seed = child_seed(ctx.seed, size as u64);
        let ours = semi_supervised_train(&q_lab, &lab_labels, setup.num_samples, sample_seed)
            .and_then(|clf| classify(&clf, &test_means))
            .map(count);
        rows.push(c.row("ours", ours));
        let mut q_mean = q_lab.clone();
        q_mean.variances.fill(0.0);
        let mean_only = semi_supervised_train(&q_mean, &lab_labels, 1, sample_seed)
            .and_then(|clf| classify(&clf, &test_means))
            .map(count);
        rows.push(c.row("mean-only", mean_only));
        let pca = (|| -> Result<usize> {
            let z_lab = data.inputs.select_rows(lab);
            let proj = pca_features(&z_lab, setup.latent_dim)?;
            let clf = ClassifierModel::fit(&proj.projections, &lab_labels, DEFAULT_L2)?;
            classify(&clf, &proj.project(&test_obs)?)
        })()
        .map(count);
        rows.push(c.row("pca", pca));
    }
    rows
}

#[derive(Clone, Debug)]
enum Unit {
    SemiDescribed { fraction_index: usize },
    Forecast,
    SemiSupervised,
    DimStudy { q: usize, d: usize, fraction_index: usize },
}

fn units(config: &ExperimentConfig) -> Vec<(usize, Unit)> {
    let mut out = Vec::new();
    for trial in 0..config.trials {
        match config.experiment {
            ExperimentKind::SemiDescribed => {
                out.extend((0..config.fractions.len()).map(|fraction_index| (trial, Unit::SemiDescribed { fraction_index })))
            }
            ExperimentKind::Forecast => out.push((trial, Unit::Forecast)),
            ExperimentKind::SemiSupervised => out.push((trial, Unit::SemiSupervised)),
            ExperimentKind::DimStudy => {
                for &q in &config.dim_study.qs {
                    for &d in &config.dim_study.ds {
                        for fraction_index in 0..config.fractions.len() {
                            out.push((trial, Unit::DimStudy { q, d, fraction_index }));
                        }
                    }
                }
            }
        }
    }
    out
}

fn run_unit(config: &ExperimentConfig, trial: usize, unit: &Unit) -> (Vec<MetricRow>, Vec<TraceRow>) {
    let seed = config.seeds[trial];
    let fit = FitConfig {
        seed,
        ..config.fit.clone()
    };
    let ctx = |group: String, setting: f64| Ctx {
        trial,
        seed,
        group,
        setting,
    };
    match unit {
        Unit::SemiDescribed { fraction_index } => {
            let s = &config.semi_described;
            let fraction = config.fractions[*fraction_index];
            let c = ctx(String::new(), fraction);
            let rows = semi_described_task(
                seed,
                s.observed,
                s.partial,
                s.test,
                s.q,
                s.d,
                &s.generator,
                fraction,
                child_seed(seed, *fraction_index as u64),
            )
            .map(|task| run_semi_described_methods(&task, &fit, &c, &SEMI_DESCRIBED_METHODS))
            .unwrap_or_else(|e| c.failed_all(&SEMI_DESCRIBED_METHODS, &e));
            (rows, Vec::new())
        }
        Unit::DimStudy { q, d, fraction_index } => {
            let s = &config.dim_study;
            let fraction = config.fractions[*fraction_index];
            let c = ctx(format!("q={q} d={d}"), fraction);
            let rows = semi_described_task(
                seed,
                s.observed,
                s.partial,
                s.test,
                *q,
                *d,
                &s.generator,
                fraction,
                child_seed(seed, *fraction_index as u64),
            )
            .map(|task| run_semi_described_methods(&task, &fit, &c, &DIM_STUDY_METHODS))
            .unwrap_or_else(|e| c.failed_all(&DIM_STUDY_METHODS, &e));
            (rows, Vec::new())
        }
        Unit::Forecast => forecast_unit(config, &ctx(String::new(), config.forecast.horizon as f64)),
        Unit::SemiSupervised => (semi_supervised_unit(config, &ctx(String::new(), 0.0)), Vec::new()),
    }
}

/// Run every trial of the configured experiment. Stage failures become
/// failed rows; only an invalid config is an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsReport> {
    config.validate()?;
    let work = units(config);
    let results: Vec<(Vec<MetricRow>, Vec<TraceRow>)> =
        work.par_iter().map(|(trial, unit)| run_unit(config, *trial, unit)).collect();
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (r, t) in results {
        rows.extend(r);
        traces.extend(t);
    }
    Ok(MetricsReport {
        experiment: config.experiment,
        config: config.clone(),
        summary: summarize(&rows),
        rows,
        traces,
        provenance: Provenance::for_config(config)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for kind in [
            ExperimentKind::SemiDescribed,
            ExperimentKind::Forecast,
            ExperimentKind::SemiSupervised,
            ExperimentKind::DimStudy,
        ] {
            let cfg = ExperimentConfig::preset(kind);
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn partial_config_overrides_preset() {
        let cfg = ExperimentConfig::from_json(
            r#"{"experiment": "semi-described", "trials": 2, "fractions": [0.5], "semi_described": {"q": 3}}"#,
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![0, 1]);
        assert_eq!(cfg.semi_described.q, 3);
        assert_eq!(cfg.semi_described.observed, 40);
        assert!(ExperimentConfig::from_json(r#"{"experiment": "forecast", "trials": 2, "seeds": [1]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "forecast", "bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "semi-described", "fractions": [1.5]}"#).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::preset(ExperimentKind::Forecast);
        let b = a.clone().with_first_seed(7);
        assert_eq!(a.hash().unwrap(), a.clone().hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }

    #[test]
    fn split_is_disjoint_and_masks_only_partial_rows() {
        let task = semi_described_task(3, 5, 6, 7, 4, 2, &SynthParams::default(), 0.5, 11).unwrap();
        assert!(task.split.disjoint());
        assert_eq!(task.split.observed.len() + task.split.partial.len() + task.split.test.len(), 18);
        for r in task.observed_train_rows() {
            assert!(task.train.input_mask.row(r).iter().all(|m| *m));
        }
        let hidden: usize = task
            .partial_train_rows()
            .iter()
            .map(|r| task.train.input_mask.row(*r).iter().filter(|m| !**m).count())
            .sum();
        assert_eq!(hidden, 12);
        assert_eq!(task.test_x.nrows(), 7);
    }

    #[test]
    fn labelled_order_is_balanced_and_nested() {
        let labels: Vec<i64> = (0..30).map(|i| (i % 3) as i64).collect();
        let order = labelled_order(&labels, 5);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..30).collect::<Vec<_>>());
        let first: Vec<i64> = order[..3].iter().map(|r| labels[*r]).collect();
        assert_eq!(first, vec![0, 1, 2]);
    }

    #[test]
    fn forecast_task_shapes() {
        let setup = ForecastSetup::default();
        let t = forecast_task(&setup).unwrap();
        assert_eq!(t.dataset.n(), 54);
        assert_eq!(t.dataset.q(), 18);
        assert_eq!(t.seed_window.len(), 18);
        assert_eq!(t.truth.len(), 1110);
        // Last training pair ends where the seed window ends.
        assert_eq!(t.dataset.outputs[(53, 0)], t.seed_window[17]);
    }
}
