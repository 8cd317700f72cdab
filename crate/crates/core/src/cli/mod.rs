//! Configuration ingestion, the experiment registry, run orchestration, and
//! serialization of every report.

pub mod config;
pub mod experiments;
pub mod runner;

pub use config::{
    apply_overrides, load_config, parse_config, AnalysisToggles, ConfigError, DatasetSource,
    ExperimentConfig, InlinePoint, PretrainSettings, StopRule, TrainSettings, SCHEMA_VERSION,
};
pub use experiments::{builtin_config, builtin_dataset, list_experiments, ExperimentInfo};
pub use runner::{
    read_metrics_csv, read_trajectory_csv, run, MetricsRow, RunError, RunManifest, RunReport,
};
