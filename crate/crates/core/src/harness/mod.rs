//! Experiment orchestration: config, run directories, manifests and reports.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use config::{derive_seed, DataConfig, DomainSource, ExperimentConfig, Scenario, SCHEMA_VERSION};
pub use manifest::{ExperimentManifest, Phase, PhaseRecord, PhaseStatus};
pub use pipeline::{load_domain, run_pipeline, Datasets, Pipeline};
pub use report::{accuracy_table, emit_reports, loss_plot, read_loss_series, synthesis_grid};
