//! Parameter storage, a reverse-mode tape and an AdamW optimiser shared by
//! the neural models.

mod optim;
mod params;
mod tape;

pub use optim::{clip_global_norm, warmup_lr, AdamW, AdamWConfig};
pub use params::{ParamEntry, ParamId, ParamSet};
pub use tape::{focal_value, Grads, Tape, Var, LOG_CLAMP};
