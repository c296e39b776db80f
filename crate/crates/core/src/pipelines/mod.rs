//! Learning pipelines built from the model: semi-described regression,
//! auto-regressive forecasting and semi-supervised classification.

mod autoregressive;
mod classifier;
pub(crate) mod semi_described;
mod semi_supervised;

pub use autoregressive::{
    autoregressive_reformat, forecast_with_posterior, iterative_forecast, iterative_forecast_recorded,
    ForecastConfig,
};
pub use classifier::{ClassifierModel, DEFAULT_L2};
pub use semi_described::{semi_described_fit, semi_described_from_stage1, stage3_fit, ImputationMode, SemiDescribedResult};
pub use semi_supervised::{
    semi_supervised_embed, semi_supervised_predict, semi_supervised_predict_batch, semi_supervised_train,
    Embedding, DEFAULT_NUM_SAMPLES,
};
