//! Experiment orchestration: configuration, the training loop, evaluation
//! and run artifacts.
//!
//! Every evaluation recomputes batch-norm statistics with one train-mode pass
//! over the first `calibration_samples` training examples, so an evaluated
//! weight vector scores the same whether it comes from a live run or a saved
//! `.pqw` file.

mod config;
mod metrics;
mod train;

pub use config::{parse_config, parse_config_str, serialize_config, Arch, BlobsConfig, DatasetKind, ExperimentConfig, CONFIG_KEYS};
pub use metrics::{emit_metrics, format_sig9, read_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use train::{
    build_network, calibrate_batchnorm, evaluate, evaluate_calibrated, evaluate_weights, load_splits,
    read_float_weights, run_experiment, run_experiment_on, EvalReport, RunArtifacts, RunSummary, Snapshot,
};
