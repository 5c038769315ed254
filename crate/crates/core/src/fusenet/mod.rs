//! Multimodal transformer: per-modality projection and encoders, attention
//! pooling over time, concatenation with the text vector, and an MLP head,
//! trained with focal loss and mixup.

mod config;
mod gradcheck;
mod model;
mod train;

pub use config::{FusionConfig, Positional};
pub use gradcheck::{grad_check, tiny_problem, GradCheckOptions, GradCheckReport, GRAD_CHECK_TOL};
pub use model::{
    attention_pool, positional_encoding, project, Forward, FusionInput, FusionModel, InputDims, Mode, CONFIG_FILE,
    LN_EPS, PARAMS_DIR,
};
pub use train::{
    inverse_frequency_alpha, mix_with, mixup, predict_all, predict_dataset, train, EpochRecord, TrainHistory,
};
