//! Classification metrics, speaker-independent cross-validation and the
//! ablation runner.

mod ablation;
mod cv;
mod metrics;
mod models;

pub use ablation::{run_ablation, AblationReport, AblationResult, AblationRow, AblationSuite};
pub use cv::{run_cv, CvReport, Predictions, ScoreSummary, Trainer};
pub use metrics::{compute_metrics, from_confusion, Metrics};
pub use models::{config_digest, ModelSpec};
