//! Config-driven experiment protocol.

pub mod checks;
pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{validate_config, ExperimentConfig};
pub use pipeline::{run_experiment, PipelineError, Predictions, Stage};
pub use report::{analyze, emit_plot_data, StabilityReport};
