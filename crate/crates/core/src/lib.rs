//! Variationally constrained Gaussian processes.
//!
//! Sparse GP regression whose inputs may be uncertain or partially observed:
//! observed entries are clamped inside a factorized Gaussian posterior over
//! the inputs, missing entries are free variational parameters, and the whole
//! thing is trained by maximizing a collapsed lower bound. On top of the
//! model sit three pipelines: semi-described regression, auto-regressive
//! forecasting with uncertainty propagation, and semi-supervised
//! classification through a latent embedding.

pub mod bound;
pub mod dataset;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod optim;
#[cfg(any(test, feature = "selftest"))]
pub mod oracle;
pub mod pipelines;
pub mod baselines;
pub mod harness;
pub mod rng;
#[cfg(feature = "selftest")]
pub mod selftest;

pub use bound::{
    bound_gradient, collapsed_bound, kl_gaussian_diag, likelihood_terms, BoundParts, GradientVector, Objective,
};
pub use dataset::MaskedDataset;
pub use error::{Error, Result};
pub use kernel::{
    kern, kernel_grads, kernel_grads_by_name, psi0, psi1, psi2, GaussianInputDistribution, InducingSet,
    KernelGrads, KernelParams, Mask, Statistic, PEAKED_VARIANCE,
};
pub use model::{
    fit, infer_latent_posterior, init, predict_deterministic, predict_uncertain, train, FitConfig, FitReport,
    InitStrategy, LatentPosterior, ModelState, ParamGroups, PredictiveGaussian,
};

pub use nalgebra;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
