//! Dense ReLU classifier with a moving-average teacher, its losses, and
//! hand-derived gradients.

mod checkpoint;
mod loss;
mod mlp;
mod optim;

pub use checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use loss::{
    class_weights, finetune_loss, mean_teacher_loss, nls_suppress, softmax, softmax_row, teacher_targets, Batch,
    LossConfig, LossOutput, RowTarget, DEFAULT_SUPPRESSION,
};
pub use mlp::{backward, forward, forward_cached, Architecture, ClassifierState, Dense, ForwardCache, Params, Which};
pub use optim::{ema_update, sgd_step, Sgd};
