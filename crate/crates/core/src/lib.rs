//! Multimodal sequence classification toolkit.
//!
//! Three model families share one data model:
//!
//! * [`gbt`]: per-modality PCA, fused vectors, and class-weighted gradient-boosted trees.
//! * [`fusenet`]: a multimodal transformer with attention pooling, focal loss and mixup.
//! * [`llm_toy`]: a small decoder adapted in two stages (frozen backbone, then LoRA).
//!
//! [`dataset`] generates and loads speaker-labelled cohorts, and [`eval`] scores
//! models under speaker-independent splits.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusenet;
pub mod gbt;
pub mod llm_toy;
pub mod nn;
pub mod numcore;

pub use error::{Error, Result};
