use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, from_confusion, Metrics};
use crate::dataset::{assert_speaker_disjoint, kfold_by_speaker, Dataset, TaskKind};
use crate::{Error, Result};

/// Dev-set predictions from one training run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Predictions {
    pub classes: Vec<usize>,
    pub unparsed: usize,
}

impl From<Vec<usize>> for Predictions {
    fn from(classes: Vec<usize>) -> Self {
        Predictions { classes, unparsed: 0 }
    }
}

/// A model family as seen by cross-validation: fit on `train`, predict `dev`.
pub trait Trainer: Sync {
    fn fit_predict(&self, train: &Dataset, dev: &Dataset, task: TaskKind, seed: u64) -> Result<Predictions>;
}

impl<F> Trainer for F
where
    F: Fn(&Dataset, &Dataset, TaskKind, u64) -> Result<Predictions> + Sync,
{
    fn fit_predict(&self, train: &Dataset, dev: &Dataset, task: TaskKind, seed: u64) -> Result<Predictions> {
        self(train, dev, task, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub weighted_f1: f64,
    pub unweighted_f1: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    /// Metrics over all dev predictions pooled across folds.
    pub pooled: Metrics,
    pub folds: Vec<Metrics>,
    pub mean: ScoreSummary,
    /// Population standard deviation across folds.
    pub std: ScoreSummary,
}

/// Speaker-independent k-fold cross-validation. Every fold trains with the
/// same seed; fold errors are wrapped with their fold index.
pub fn run_cv(ds: &Dataset, task: TaskKind, k: usize, trainer: &dyn Trainer, seed: u64) -> Result<CvReport> {
    let classes = ds.task(task)?.classes;
    let splits = kfold_by_speaker(ds, k, seed)?;
    let folds: Vec<Metrics> = splits
        .par_iter()
        .enumerate()
        .map(|(fold, split)| {
            assert_speaker_disjoint(ds, split);
            let (train, dev) = split.apply(ds);
            let run = || -> Result<Metrics> {
                let preds = trainer.fit_predict(&train, &dev, task, seed)?;
                let mut m = compute_metrics(&preds.classes, &dev.labels(task)?, classes)?;
                m.unparsed = preds.unparsed;
                Ok(m)
            };
            run().map_err(|e| Error::Fold {
                fold,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut confusion = vec![vec![0u64; classes]; classes];
    for m in &folds {
        for (acc, row) in confusion.iter_mut().zip(&m.confusion) {
            acc.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
    }
    let mut pooled = from_confusion(confusion);
    pooled.unparsed = folds.iter().map(|m| m.unparsed).sum();

    let stat = |f: fn(&Metrics) -> f64| {
        let vals: Vec<f64> = folds.iter().map(f).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var.sqrt())
    };
    let (wm, ws) = stat(|m| m.weighted_f1);
    let (um, us) = stat(|m| m.unweighted_f1);
    let (am, as_) = stat(|m| m.accuracy);
    Ok(CvReport {
        k,
        seed,
        pooled,
        folds,
        mean: ScoreSummary {
            weighted_f1: wm,
            unweighted_f1: um,
            accuracy: am,
        },
        std: ScoreSummary {
            weighted_f1: ws,
            unweighted_f1: us,
            accuracy: as_,
        },
    })
}
