//! Datasets, the labeled/queried/unlabeled partition, and bit accounting.

mod budget;
mod dataset;
mod split;

pub use budget::{plan_budget, BitBudget, BudgetPlan, QuotaRounding};
pub use dataset::{
    generate_synthetic, generate_synthetic_task, load_dataset, save_dataset, Dataset, GaussianMixture,
};
pub use split::{make_initial_split, SampleState, SplitState};
