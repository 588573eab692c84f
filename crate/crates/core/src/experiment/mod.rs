//! Config-driven orchestration of the full experiment with resumable,
//! content-addressed stages.

mod config;
mod pipeline;

pub use config::{
    AttackConfig, BaselineConfig, ConfigError, CsvData, DataConfig, EvaluateConfig, ExperimentConfig, ForecasterConfig, OracleMode,
    RemoteTarget, SignatureConfig, SyntheticData,
};
pub use pipeline::{Experiment, ExperimentError, RunManifest, Stage, StageRecord, StageStatus, PIPELINE_VERSION};
