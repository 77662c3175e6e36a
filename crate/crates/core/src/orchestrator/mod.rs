//! Staged one-bit supervision experiments under a bit budget.

mod config;
mod pipeline;
mod trainer;

pub use config::{
    BudgetSpec, ClassWeighting, DatasetSource, ExperimentConfig, Init, ModelConfig, SyntheticSpec, TrainConfig,
    TrainingMode,
};
pub use pipeline::{
    finish_stage, pure_mode, query_stage, row_targets, run_baseline, run_baseline_on, run_experiment,
    run_experiment_on, run_pure_one_bit, run_pure_one_bit_on, run_stage, total_budget, train_initial, Arm, RunState,
    StageAnswers, Task,
};
pub use trainer::{train_finetune, train_mean_teacher, TrainStats};
