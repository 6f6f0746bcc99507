//! Fully-connected classifier with batch normalization, trained by SGD.

mod forward;
mod grad;
mod model;
mod train;

pub(crate) use forward::cross_entropy;
pub use forward::{eval_logits, forward, softmax_rows, Mode};
pub use grad::{per_sample_grad, per_sample_grad_into, GradWorkspace};
pub use model::{
    init_model, BatchNorm, Dense, HiddenLayer, ModelSpec, ModelState, ParamKind, ParamSegment, CHECKPOINT_TAG,
};
pub use train::{
    argmax, evaluate_accuracy, evaluate_accuracy_with, fine_tune, fine_tune_config, predict, train, train_observed,
    train_with_report, TrainConfig, TrainReport, FINE_TUNE_DECAY,
};
