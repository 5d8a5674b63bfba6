//! Optimizer, staged training, evaluation and the variant ablation.

mod ablate;
mod config;
mod evaluate;
mod sgd;
mod trainer;

pub use ablate::{ablate, curve_csv, median, AblationSummary, ExperimentResult, RunResult};
pub use config::{ExperimentConfig, NetworkConfig, Paths, StagePlan, TrainConfig};
pub use evaluate::{evaluate, evaluate_per_sample, fit_to_input, supervision_rmse_log, EvalOptions, HeadReports};
pub use sgd::{learning_rate, sgd_step, sgd_update};
pub use trainer::{train, CurvePoint, Stage, TrainOptions, TrainReport};
