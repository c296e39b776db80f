//! Data generation, dataset files, metrics and the experiment runner.

pub mod experiments;
pub mod io;
pub mod mackey_glass;
pub mod metrics;
pub mod report;
pub mod synth;

pub use experiments::{run_experiment, ExperimentConfig, ExperimentKind, MetricRow, MetricsReport, TraceRow};
pub use mackey_glass::{mackey_glass_simulate, MackeyGlassConfig};
pub use metrics::{metrics, misclassified, Metrics};
pub use report::{write_report, SummaryRow};
pub use synth::{apply_missingness, synth_gp_dataset, synth_manifold_dataset, ManifoldParams, SynthParams};
