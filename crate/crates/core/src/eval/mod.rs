//! Evaluation: classifier metrics and the experiment drivers built on them.

mod experiment;
mod metrics;

pub use experiment::{
    cells_to_csv, env_combos, join_envs, run_continual, run_matrix, run_one, run_sim2real,
    train_centralized, write_csv, CellFailure, CellResult, ContinualArm, ContinualConfig,
    ContinualReport, DatasetSizes, ExperimentConfig, MatrixReport, Sim2RealReport,
    Sim2RealSummary, TrainMode,
};
pub use metrics::{evaluate, metrics_from_scores, predict_scores, BoxStats, MetricsReport};
