//! The variationally constrained GP as a trainable value.

mod file;
mod infer;
mod predict;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bound::{bound_and_packed_gradient, collapsed_bound, BoundParts, Objective, RawGradient};
use crate::dataset::MaskedDataset;
use crate::error::{check_dim, Error, Result};
use crate::kernel::{GaussianInputDistribution, InducingSet, KernelParams, Mask, PEAKED_VARIANCE};
use crate::optim::{minimize, LbfgsConfig, Termination};
use crate::rng::{stream, Stream};

pub use file::{ModelFile, FORMAT_VERSION};
pub use infer::{infer_latent_posterior, LatentInference, LatentPosterior};
pub use predict::{predict_deterministic, predict_uncertain, Posterior, PredictiveGaussian};

/// Initial variance of free (missing or latent) input entries.
pub const INIT_FREE_VARIANCE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub kernel: KernelParams,
    pub inducing: InducingSet,
    pub q_input: GaussianInputDistribution,
    /// Training outputs after subtracting `output_offset`.
    pub train_outputs: DMatrix<f64>,
    pub output_offset: DVector<f64>,
    pub objective: Objective,
    /// Keep free entries' variances at their current value (point-estimate
    /// imputation); only their means are optimized.
    pub freeze_free_variances: bool,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroups {
    pub hyperparameters: bool,
    pub inducing: bool,
    pub variational: bool,
}

impl ParamGroups {
    pub const ALL: Self = Self {
        hyperparameters: true,
        inducing: true,
        variational: true,
    };
    pub const WARMUP: Self = Self {
        hyperparameters: false,
        inducing: true,
        variational: true,
    };
    pub const HYPERPARAMETERS: Self = Self {
        hyperparameters: true,
        inducing: false,
        variational: false,
    };
}

/// Layout of the optimizer's flat vector:
/// `[ln σ², ln ℓ_1..Q, ln β] [X_u row-major] [free μ] [ln S of free entries]`,
/// each block present only when its group is selected. Free entries are
/// enumerated row-major and never include masked (clamped) entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Packing {
    pub groups: ParamGroups,
    q: usize,
    m: usize,
    free: Vec<(usize, usize)>,
    variances: bool,
}

impl Packing {
    pub fn len(&self) -> usize {
        let mut len = 0;
        if self.groups.hyperparameters {
            len += self.q + 2;
        }
        if self.groups.inducing {
            len += self.m * self.q;
        }
        if self.groups.variational {
            len += self.free.len() * if self.variances { 2 } else { 1 };
        }
        len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn free_entries(&self) -> &[(usize, usize)] {
        &self.free
    }

    pub fn pack(&self, s: &ModelState) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        if self.groups.hyperparameters {
            v.push(s.kernel.signal_variance.ln());
            v.extend(s.kernel.lengthscales.iter().map(|l| l.ln()));
            v.push(s.kernel.noise_precision.ln());
        }
        if self.groups.inducing {
            for r in 0..self.m {
                v.extend(s.inducing.points.row(r).iter());
            }
        }
        if self.groups.variational {
            v.extend(self.free.iter().map(|&e| s.q_input.means[e]));
            if self.variances {
                v.extend(self.free.iter().map(|&e| s.q_input.variances[e].ln()));
            }
        }
        v
    }

    pub fn unpack(&self, s: &mut ModelState, v: &[f64]) {
        assert_eq!(v.len(), self.len(), "packed vector length");
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("length checked");
        if self.groups.hyperparameters {
            s.kernel.signal_variance = next().exp();
            for l in s.kernel.lengthscales.iter_mut() {
                *l = next().exp();
            }
            s.kernel.noise_precision = next().exp();
        }
        if self.groups.inducing {
            for r in 0..self.m {
                for c in 0..self.q {
                    s.inducing.points[(r, c)] = next();
                }
            }
        }
        if self.groups.variational {
            for &e in &self.free {
                s.q_input.means[e] = next();
            }
            if self.variances {
                for &e in &self.free {
                    s.q_input.variances[e] = next().exp();
                }
            }
        }
    }

    /// Chain rule from natural to packed coordinates.
    pub(crate) fn transform_gradient(&self, s: &ModelState, g: &RawGradient) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        if self.groups.hyperparameters {
            v.push(g.signal_variance * s.kernel.signal_variance);
            v.extend(
                g.lengthscales
                    .iter()
                    .zip(&s.kernel.lengthscales)
                    .map(|(d, l)| d * l),
            );
            v.push(g.noise_precision * s.kernel.noise_precision);
        }
        if self.groups.inducing {
            for r in 0..self.m {
                v.extend(g.inducing.row(r).iter());
            }
        }
        if self.groups.variational {
            v.extend(self.free.iter().map(|&e| g.means[e]));
            if self.variances {
                v.extend(self.free.iter().map(|&e| g.variances[e] * s.q_input.variances[e]));
            }
        }
        v
    }
}

impl ModelState {
    /// A state with zero output offset under the variational objective.
    pub fn new(
        kernel: KernelParams,
        inducing: InducingSet,
        q_input: GaussianInputDistribution,
        train_outputs: DMatrix<f64>,
    ) -> Result<Self> {
        let d = train_outputs.ncols();
        let s = Self {
            kernel,
            inducing,
            q_input,
            train_outputs,
            output_offset: DVector::zeros(d),
            objective: Objective::Variational,
            freeze_free_variances: false,
            seed: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        self.q_input.validate()?;
        let q = self.kernel.input_dim();
        check_dim("input distribution columns", q, self.q_input.q())?;
        check_dim("inducing columns", q, self.inducing.points.ncols())?;
        check_dim("output rows", self.q_input.n(), self.train_outputs.nrows())?;
        check_dim("output offset", self.train_outputs.ncols(), self.output_offset.len())?;
        if self.q_input.n() == 0 {
            return Err(Error::EmptyInput("model has no training rows".into()));
        }
        if self.inducing.m() == 0 {
            return Err(Error::EmptyInput("model has no inducing points".into()));
        }
        if self.train_outputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training outputs".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.q_input.n()
    }

    pub fn q(&self) -> usize {
        self.q_input.q()
    }

    pub fn d(&self) -> usize {
        self.train_outputs.ncols()
    }

    pub fn m(&self) -> usize {
        self.inducing.m()
    }

    pub fn packing(&self, groups: ParamGroups) -> Packing {
        let free = match self.objective {
            Objective::Variational => (0..self.n())
                .flat_map(|n| (0..self.q()).map(move |q| (n, q)))
                .filter(|&(n, q)| !self.q_input.fixed_mask.get(n, q))
                .collect(),
            // The projected objective does not depend on input variances and
            // has no KL to anchor free means; nothing variational is optimized.
            Objective::Projected => Vec::new(),
        };
        Packing {
            groups,
            q: self.q(),
            m: self.m(),
            free,
            variances: !self.freeze_free_variances,
        }
    }

    pub fn bound(&self) -> Result<BoundParts> {
        collapsed_bound(self)
    }

    /// Training outputs in the original (uncentered) units.
    pub fn outputs(&self) -> DMatrix<f64> {
        let mut y = self.train_outputs.clone();
        for mut r in y.row_iter_mut() {
            r += self.output_offset.transpose();
        }
        y
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Latent dimensions from principal components of Y.
    #[default]
    Pca,
    /// Latent dimensions drawn from the standard-normal prior.
    RandomSubset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    pub convergence_tol: f64,
    /// `None` selects min(N, 30).
    pub num_inducing: Option<usize>,
    pub seed: u64,
    pub init_strategy: InitStrategy,
    /// Iterations with hyperparameters frozen before the joint phase.
    pub warmup_iterations: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            convergence_tol: 1e-7,
            num_inducing: None,
            seed: 0,
            init_strategy: InitStrategy::Pca,
            warmup_iterations: 50,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_tol > 0.0 && self.convergence_tol.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "convergence_tol must be positive, got {}",
                self.convergence_tol
            )));
        }
        if self.num_inducing == Some(0) {
            return Err(Error::InvalidParameter("num_inducing must be at least 1".into()));
        }
        Ok(())
    }

    pub fn inducing_for(&self, n: usize) -> Result<usize> {
        match self.num_inducing {
            None => Ok(n.min(30)),
            Some(m) if m > n => Err(Error::InvalidParameter(format!(
                "num_inducing {m} exceeds the {n} training rows"
            ))),
            Some(m) => Ok(m),
        }
    }
}

fn column_mean_var(x: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = x.nrows() as f64;
    let mean = DVector::from_fn(x.ncols(), |c, _| x.column(c).sum() / n);
    let var = DVector::from_fn(x.ncols(), |c, _| {
        x.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n
    });
    (mean, var)
}

/// Leading principal-component scores of `y` (centered), scaled to unit
/// variance. Extra requested columns beyond the rank are left at zero.
fn pca_scores(y: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = y.nrows();
    let cov = y.transpose() * y / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let mut out = DMatrix::zeros(n, k);
    for (j, &c) in order.iter().take(k).enumerate() {
        let lambda = eig.eigenvalues[c];
        if lambda <= 1e-12 {
            continue;
        }
        let scores = y * eig.eigenvectors.column(c);
        out.set_column(j, &(scores / lambda.sqrt()));
    }
    out
}

/// Initial model for `dataset`.
///
/// Observed entries are clamped (`μ = z`, `S = ε`). Fully latent columns get
/// PCA scores of Y (or prior draws); partially missing entries start at the
/// column mean of their observed values. Free entries start at variance 0.5.
pub fn init(dataset: &MaskedDataset, config: &FitConfig) -> Result<ModelState> {
    config.validate()?;
    let (n, q, d) = (dataset.n(), dataset.q(), dataset.d());
    if n == 0 || d == 0 {
        return Err(Error::EmptyInput("dataset has no rows or no outputs".into()));
    }
    if q == 0 {
        return Err(Error::EmptyInput("dataset has no input dimensions".into()));
    }
    if dataset.outputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training outputs must be fully observed".into()));
    }
    let m = config.inducing_for(n)?;
    let mut rng = stream(config.seed, Stream::Init);

    let (offset, y_var) = column_mean_var(&dataset.outputs);
    let mut y = dataset.outputs.clone();
    for mut r in y.row_iter_mut() {
        r -= offset.transpose();
    }

    let mask = &dataset.input_mask;
    let latent_cols: Vec<usize> = (0..q).filter(|c| (0..n).all(|r| !mask.get(r, *c))).collect();
    let mut means = DMatrix::zeros(n, q);
    let mut vars = DMatrix::from_element(n, q, PEAKED_VARIANCE);
    let fixed = mask.clone();

    if !latent_cols.is_empty() {
        let scores = match config.init_strategy {
            InitStrategy::Pca => {
                let s = pca_scores(&y, latent_cols.len());
                // Columns beyond the rank of Y fall back to prior draws.
                let mut s = s;
                for j in 0..s.ncols() {
                    if s.column(j).iter().all(|v| *v == 0.0) {
                        for r in 0..n {
                            s[(r, j)] = rng.sample(StandardNormal);
                        }
                    }
                }
                s
            }
            InitStrategy::RandomSubset => DMatrix::from_fn(n, latent_cols.len(), |_, _| rng.sample(StandardNormal)),
        };
        for (j, &c) in latent_cols.iter().enumerate() {
            for r in 0..n {
                means[(r, c)] = scores[(r, j)];
                vars[(r, c)] = INIT_FREE_VARIANCE;
            }
        }
    }
    for c in (0..q).filter(|c| !latent_cols.contains(c)) {
        let obs: Vec<f64> = (0..n).filter(|r| mask.get(*r, c)).map(|r| dataset.inputs[(r, c)]).collect();
        let col_mean = obs.iter().sum::<f64>() / obs.len() as f64;
        for r in 0..n {
            if mask.get(r, c) {
                means[(r, c)] = dataset.inputs[(r, c)];
            } else {
                means[(r, c)] = col_mean;
                vars[(r, c)] = INIT_FREE_VARIANCE;
            }
        }
    }
    let q_input = GaussianInputDistribution::new(means, vars, fixed)?;

    let rows = sample(&mut rng, n, m).into_vec();
    let mut z = q_input.means.select_rows(&rows);
    let (_, mean_var) = column_mean_var(&q_input.means);
    let lengthscales: Vec<f64> = mean_var
        .iter()
        .map(|v| if v.sqrt() > 1e-6 { v.sqrt() } else { 1.0 })
        .collect();
    // Identical rows (e.g. from mean-filled entries) would make K_uu singular.
    let mut inducing = InducingSet::new(z.clone())?;
    while let Some(&(_, j)) = inducing.near_duplicates(1e-8).first() {
        for c in 0..q {
            let jitter: f64 = rng.sample(StandardNormal);
            z[(j, c)] += 1e-2 * lengthscales[c] * jitter;
        }
        inducing = InducingSet::new(z.clone())?;
    }

    let mut signal = y_var.mean();
    if !(signal > 1e-12) {
        signal = 1.0;
    }
    let kernel = KernelParams::new(signal, lengthscales, 1.0 / (0.01 * signal))?;
    let state = ModelState {
        kernel,
        inducing,
        q_input,
        train_outputs: y,
        output_offset: offset,
        objective: Objective::Variational,
        freeze_free_variances: false,
        seed: config.seed,
    };
    state.validate()?;
    Ok(state)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Bound value at the start and after every accepted iteration.
    pub trace: Vec<f64>,
    pub warmup_iterations: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

impl FitReport {
    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::GradientTolerance | Termination::RelativeChange | Termination::EmptyProblem
        )
    }

    pub fn final_bound(&self) -> f64 {
        *self.trace.last().expect("trace has the initial value")
    }
}

/// Maximize the bound over the parameters in `groups`.
pub fn optimize_groups(
    state: &ModelState,
    groups: ParamGroups,
    max_iterations: usize,
    convergence_tol: f64,
) -> Result<(ModelState, FitReport)> {
    let packing = state.packing(groups);
    let x0 = packing.pack(state);
    let mut scratch = state.clone();
    let cfg = LbfgsConfig {
        max_iterations,
        rel_tol: convergence_tol,
        ..LbfgsConfig::default()
    };
    let result = minimize(
        |x| {
            packing.unpack(&mut scratch, x);
            let (parts, grad) = bound_and_packed_gradient(&scratch, &packing).ok()?;
            if grad.iter().any(|g| !g.is_finite()) {
                return None;
            }
            Some((-parts.total, grad.into_iter().map(|g| -g).collect()))
        },
        &x0,
        &cfg,
    )
    .map_err(|e| match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("bound at the starting state: {msg}")),
        other => other,
    })?;
    let mut out = state.clone();
    packing.unpack(&mut out, &result.x);
    let report = FitReport {
        trace: result.trace.iter().map(|f| -f).collect(),
        warmup_iterations: 0,
        iterations: result.iterations,
        evaluations: result.evaluations,
        termination: result.termination,
    };
    Ok((out, report))
}

/// Two-phase optimization: a warm-up with hyperparameters frozen, then all
/// parameters jointly. The iteration budget is shared between phases.
pub fn fit(state: &ModelState, config: &FitConfig) -> Result<(ModelState, FitReport)> {
    config.validate()?;
    state.validate()?;
    let warm = config.warmup_iterations.min(config.max_iterations);
    let (mut current, mut trace, mut iters, mut evals) = (state.clone(), Vec::new(), 0, 0);
    if warm > 0 && !state.packing(ParamGroups::WARMUP).is_empty() {
        let (s, r) = optimize_groups(state, ParamGroups::WARMUP, warm, config.convergence_tol)?;
        current = s;
        trace = r.trace;
        iters = r.iterations;
        evals = r.evaluations;
    }
    let warmup_iterations = iters;
    let (out, r) = optimize_groups(
        &current,
        ParamGroups::ALL,
        config.max_iterations - warmup_iterations,
        config.convergence_tol,
    )?;
    if trace.is_empty() {
        trace = r.trace;
    } else {
        trace.extend(r.trace.into_iter().skip(1));
    }
    let report = FitReport {
        trace,
        warmup_iterations,
        iterations: iters + r.iterations,
        evaluations: evals + r.evaluations,
        termination: r.termination,
    };
    log::debug!(
        "fit: {} iterations, bound {:.6}, {:?}",
        report.iterations,
        report.final_bound(),
        report.termination
    );
    Ok((out, report))
}

/// `init` followed by `fit`.
pub fn train(dataset: &MaskedDataset, config: &FitConfig) -> Result<(ModelState, FitReport)> {
    fit(&init(dataset, config)?, config)
}

impl Mask {
    /// Mask with `true` exactly where `f64` entries are finite.
    pub fn finite(x: &DMatrix<f64>) -> Self {
        Mask::from_fn(x.nrows(), x.ncols(), |r, c| x[(r, c)].is_finite())
    }
}
