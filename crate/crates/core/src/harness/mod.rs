//! Experiment driver: data preparation, five-fold cross-validation,
//! metrics, ablations and the main-branch removal attack.

mod data;
mod experiments;
mod folds;
mod metrics;
mod train;

pub use data::{prepare_cohort, prepare_input, PipelineConfig};
pub use experiments::{
    ablation_configs, cross_validate, desk_model, run_ablation_grid, run_data_attack,
    AttackReport, CrossValidation, ExperimentConfig, FoldResult,
};
pub use folds::{five_fold_split, FoldSplit, NUM_FOLDS};
pub use metrics::{compute_metrics, ClassMetrics, MetricsReport};
pub use train::{
    evaluate, mean_loss, predict_all, train, EpochLog, Selection, TrainConfig, TrainLog,
    TrainOutcome,
};
