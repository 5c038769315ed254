use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cv::{Predictions, Trainer};
use crate::dataset::{kfold_by_speaker, Dataset, TaskKind};
use crate::fusenet::{self, FusionConfig, FusionInput};
use crate::gbt::{GbtPipeline, GbtPipelineConfig};
use crate::llm_toy::{self, LlmToyConfig, Stages};
use crate::numcore::argmax;
use crate::{Error, Result};

/// SHA-256 of the canonical JSON form of `value` (object keys sorted), so the
/// digest does not depend on key order in the source file.
pub fn config_digest<T: Serialize>(value: &T) -> Result<String> {
    let canonical = serde_json::to_string(&serde_json::to_value(value)?)?;
    Ok(Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

/// A model family with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Gbt {
        #[serde(default)]
        config: GbtPipelineConfig,
    },
    Fusenet {
        #[serde(default)]
        config: FusionConfig,
        /// Trains one model per fold of the training split and averages their
        /// probabilities on the dev split.
        #[serde(default)]
        cv_folds: Option<usize>,
    },
    LlmToy {
        #[serde(default)]
        config: LlmToyConfig,
        #[serde(default = "both_stages")]
        stages: Stages,
    },
}

fn both_stages() -> Stages {
    Stages::Both
}

impl ModelSpec {
    /// The same spec with every seed it carries replaced by `seed`.
    pub fn with_seed(&self, seed: u64) -> ModelSpec {
        let mut s = self.clone();
        match &mut s {
            ModelSpec::Gbt { config } => config.booster.seed = seed,
            ModelSpec::Fusenet { config, .. } => config.seed = seed,
            ModelSpec::LlmToy { config, .. } => config.seed = seed,
        }
        s
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Gbt { .. } => "gbt",
            ModelSpec::Fusenet { .. } => "fusenet",
            ModelSpec::LlmToy { .. } => "llm_toy",
        }
    }
}

fn fusenet_probs(train: &Dataset, dev: &Dataset, task: TaskKind, config: &FusionConfig) -> Result<Vec<Vec<f64>>> {
    let (model, _) = fusenet::train(train, dev, task, config)?;
    let classes = model.classes;
    let xs: Vec<FusionInput> = dev.samples.iter().map(|s| FusionInput::from_sample(s, 0, classes)).collect();
    fusenet::predict_all(&model, &xs)
}

impl Trainer for ModelSpec {
    fn fit_predict(&self, train: &Dataset, dev: &Dataset, task: TaskKind, seed: u64) -> Result<Predictions> {
        match self.with_seed(seed) {
            ModelSpec::Gbt { config } => Ok(GbtPipeline::fit(train, dev, task, &config)?.predict(dev)?.into()),
            ModelSpec::Fusenet { config, cv_folds: None } => {
                let probs = fusenet_probs(train, dev, task, &config)?;
                Ok(probs.iter().map(|p| argmax(p)).collect::<Vec<_>>().into())
            }
            ModelSpec::Fusenet {
                config,
                cv_folds: Some(k),
            } => {
                let folds = kfold_by_speaker(train, k, seed)?;
                let mut sum: Option<Vec<Vec<f64>>> = None;
                for (fold, split) in folds.iter().enumerate() {
                    let (fold_train, fold_dev) = split.apply(train);
                    let run = || -> Result<Vec<Vec<f64>>> {
                        let (model, _) = fusenet::train(&fold_train, &fold_dev, task, &config)?;
                        let xs: Vec<FusionInput> = dev
                            .samples
                            .iter()
                            .map(|s| FusionInput::from_sample(s, 0, model.classes))
                            .collect();
                        fusenet::predict_all(&model, &xs)
                    };
                    let probs = run().map_err(|e| Error::Fold {
                        fold,
                        source: Box::new(e),
                    })?;
                    match &mut sum {
                        None => sum = Some(probs),
                        Some(acc) => {
                            for (a, p) in acc.iter_mut().zip(&probs) {
                                a.iter_mut().zip(p).for_each(|(x, y)| *x += y);
                            }
                        }
                    }
                }
                Ok(sum.unwrap_or_default().iter().map(|p| argmax(p)).collect::<Vec<_>>().into())
            }
            ModelSpec::LlmToy { config, stages } => {
                let (model, _) = llm_toy::fit(train, task, &config, stages)?;
                let classes = train.task(task)?.classes;
                let fallback = llm_toy::majority_class(&train.labels(task)?, classes);
                let eval = llm_toy::evaluate(&model, dev, fallback)?;
                Ok(Predictions {
                    classes: eval.records.iter().map(|r| r.predicted).collect(),
                    unparsed: eval.metrics.unparsed,
                })
            }
        }
    }
}
