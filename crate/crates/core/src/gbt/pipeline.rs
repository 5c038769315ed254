use std::path::Path;

use serde::{Deserialize, Serialize};

use super::booster::{train, BoostedEnsemble, GbtParams, Rows};
use crate::dataset::{Dataset, TaskKind};
use crate::error::{Error, Result};
use crate::features::{class_weights, mean_pool, pca_fit, pca_transform, PcaModel};
use crate::numcore::{argmax, Matrix};

const MODEL_FILE: &str = "gbt_model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtPipelineConfig {
    /// Components per modality; `None` feeds raw pooled features to the trees.
    pub pca_components: Option<usize>,
    pub class_weighting: bool,
    /// Train on individual frames and vote at inference instead of pooling.
    pub per_frame: bool,
    /// Candidate learning rates; the one with the lowest dev log loss wins.
    pub learning_rates: Vec<f64>,
    pub booster: GbtParams,
}

impl Default for GbtPipelineConfig {
    fn default() -> Self {
        GbtPipelineConfig {
            pca_components: Some(50),
            class_weighting: true,
            per_frame: false,
            learning_rates: vec![0.01, 0.05],
            booster: GbtParams::default(),
        }
    }
}

/// Outcome of one learning-rate candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrTrial {
    pub learning_rate: f64,
    pub best_round: usize,
    pub rounds_trained: usize,
    pub dev_mlogloss: Option<f64>,
}

/// Pooling (or frame stacking), optional per-modality PCA, audio‖visual
/// fusion, and a boosted ensemble on top.
#[derive(Debug, Clone)]
pub struct GbtPipeline {
    pub config: GbtPipelineConfig,
    pub task: TaskKind,
    pub classes: usize,
    pub audio_pca: Option<PcaModel>,
    pub visual_pca: Option<PcaModel>,
    pub ensemble: BoostedEnsemble,
    pub trials: Vec<LrTrial>,
}

#[derive(Serialize, Deserialize)]
struct StoredPipeline {
    config: GbtPipelineConfig,
    task: TaskKind,
    classes: usize,
    has_pca: bool,
    ensemble: BoostedEnsemble,
    trials: Vec<LrTrial>,
}

/// Audio and visual design matrices plus, per row, the owning sample.
struct Design {
    audio: Matrix,
    visual: Matrix,
    owner: Vec<usize>,
}

fn design(ds: &Dataset, per_frame: bool) -> Result<Design> {
    let (da, dv, _) = ds.dims();
    if !per_frame {
        let mut audio = Vec::with_capacity(ds.len() * da);
        let mut visual = Vec::with_capacity(ds.len() * dv);
        for s in &ds.samples {
            audio.extend(mean_pool(&s.audio)?);
            visual.extend(mean_pool(&s.visual)?);
        }
        return Ok(Design {
            audio: Matrix::from_vec(ds.len(), da, audio)?,
            visual: Matrix::from_vec(ds.len(), dv, visual)?,
            owner: (0..ds.len()).collect(),
        });
    }
    let mut audio = Vec::new();
    let mut visual = Vec::new();
    let mut owner = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let frames = s.audio.frames().min(s.visual.frames());
        if frames == 0 {
            return Err(Error::Dimension(format!("sample {} has no frames", s.id)));
        }
        for t in 0..frames {
            audio.extend_from_slice(s.audio.values.row(t));
            visual.extend_from_slice(s.visual.values.row(t));
            owner.push(i);
        }
    }
    Ok(Design {
        audio: Matrix::from_vec(owner.len(), da, audio)?,
        visual: Matrix::from_vec(owner.len(), dv, visual)?,
        owner,
    })
}

fn fit_pca(x: &Matrix, k: usize, name: &str) -> Result<PcaModel> {
    let k_max = x.rows().saturating_sub(1).min(x.cols());
    let k_eff = k.min(k_max);
    if k_eff < k {
        log::warn!("{name} PCA: {k} components requested, only {k_eff} possible");
    }
    pca_fit(x, k_eff.max(1))
}

/// Weights `N_max / N_c` over the classes present in `labels`.
fn row_weights(labels: &[usize], classes: usize, enabled: bool) -> Result<Vec<f64>> {
    if !enabled {
        return Ok(vec![1.0; labels.len()]);
    }
    let present: Vec<usize> = {
        let mut seen = vec![false; classes];
        labels.iter().for_each(|&y| seen[y] = true);
        (0..classes).filter(|&c| seen[c]).collect()
    };
    let remap: Vec<usize> = labels
        .iter()
        .map(|y| present.iter().position(|c| c == y).unwrap())
        .collect();
    let w = class_weights(&remap, present.len())?;
    Ok(remap.iter().map(|&c| w[c]).collect())
}

impl GbtPipeline {
    pub fn fit(train_ds: &Dataset, dev_ds: &Dataset, task: TaskKind, config: &GbtPipelineConfig) -> Result<Self> {
        if config.learning_rates.is_empty() {
            return Err(Error::Config("at least one learning rate is required".into()));
        }
        let classes = train_ds.task(task)?.classes;
        let sample_labels = train_ds.labels(task)?;
        let train_design = design(train_ds, config.per_frame)?;
        let (audio_pca, visual_pca) = match config.pca_components {
            Some(k) => (
                Some(fit_pca(&train_design.audio, k, "audio")?),
                Some(fit_pca(&train_design.visual, k, "visual")?),
            ),
            None => (None, None),
        };

        let mut pipeline = GbtPipeline {
            config: config.clone(),
            task,
            classes,
            audio_pca,
            visual_pca,
            ensemble: BoostedEnsemble {
                params: config.booster.clone(),
                classes,
                n_features: 0,
                base_score: vec![],
                trees: vec![],
                best_round: 0,
                history: Default::default(),
            },
            trials: Vec::new(),
        };
        let x_train = pipeline.fuse(&train_design)?;
        let y_train: Vec<usize> = train_design.owner.iter().map(|&i| sample_labels[i]).collect();
        let w_train = row_weights(&y_train, classes, config.class_weighting)?;

        let dev_rows = if dev_ds.is_empty() {
            None
        } else {
            let d = design(dev_ds, config.per_frame)?;
            let labels = dev_ds.labels(task)?;
            let y: Vec<usize> = d.owner.iter().map(|&i| labels[i]).collect();
            Some((pipeline.fuse(&d)?, y))
        };

        let mut best: Option<BoostedEnsemble> = None;
        for &lr in &config.learning_rates {
            let params = GbtParams {
                learning_rate: lr,
                ..config.booster.clone()
            };
            let dev = dev_rows.as_ref().map(|(x, y)| Rows::new(x, y));
            let model = train(Rows::weighted(&x_train, &y_train, &w_train), dev, classes, &params)?;
            let loss = model.best_dev_mlogloss();
            pipeline.trials.push(LrTrial {
                learning_rate: lr,
                best_round: model.best_round,
                rounds_trained: model.rounds_trained(),
                dev_mlogloss: loss,
            });
            let better = match (&best, loss) {
                (None, _) => true,
                (Some(b), Some(l)) => b.best_dev_mlogloss().is_some_and(|bl| l < bl),
                (Some(_), None) => false,
            };
            if better {
                best = Some(model);
            }
        }
        pipeline.ensemble = best.expect("at least one learning rate");
        Ok(pipeline)
    }

    fn fuse(&self, d: &Design) -> Result<Matrix> {
        match (&self.audio_pca, &self.visual_pca) {
            (Some(a), Some(v)) => {
                let za = pca_transform(a, &d.audio)?;
                let zv = pca_transform(v, &d.visual)?;
                Matrix::hcat(&[&za, &zv])
            }
            _ => Matrix::hcat(&[&d.audio, &d.visual]),
        }
    }

    /// Per-sample class probabilities (frame probabilities are averaged in
    /// per-frame mode).
    pub fn predict_proba(&self, ds: &Dataset) -> Result<Matrix> {
        let d = design(ds, self.config.per_frame)?;
        let p = self.ensemble.predict_proba(&self.fuse(&d)?)?;
        if !self.config.per_frame {
            return Ok(p);
        }
        let mut out = Matrix::zeros(ds.len(), self.classes);
        let mut counts = vec![0usize; ds.len()];
        for (r, &i) in d.owner.iter().enumerate() {
            counts[i] += 1;
            for c in 0..self.classes {
                out[(i, c)] += p[(r, c)];
            }
        }
        for (i, &n) in counts.iter().enumerate() {
            for c in 0..self.classes {
                out[(i, c)] /= n as f64;
            }
        }
        Ok(out)
    }

    /// Per-sample predictions; per-frame mode takes a majority vote over frames
    /// (lowest class index on ties).
    pub fn predict(&self, ds: &Dataset) -> Result<Vec<usize>> {
        if !self.config.per_frame {
            let p = self.predict_proba(ds)?;
            return Ok(p.iter_rows().map(argmax).collect());
        }
        let d = design(ds, true)?;
        let p = self.ensemble.predict_proba(&self.fuse(&d)?)?;
        let mut votes = vec![vec![0.0; self.classes]; ds.len()];
        for (r, &i) in d.owner.iter().enumerate() {
            votes[i][argmax(p.row(r))] += 1.0;
        }
        Ok(votes.iter().map(|v| argmax(v)).collect())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if let (Some(a), Some(v)) = (&self.audio_pca, &self.visual_pca) {
            a.save(dir, "audio_pca")?;
            v.save(dir, "visual_pca")?;
        }
        let stored = StoredPipeline {
            config: self.config.clone(),
            task: self.task,
            classes: self.classes,
            has_pca: self.audio_pca.is_some(),
            ensemble: self.ensemble.clone(),
            trials: self.trials.clone(),
        };
        let path = dir.join(MODEL_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&stored)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MODEL_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let stored: StoredPipeline = serde_json::from_str(&text)?;
        let (audio_pca, visual_pca) = if stored.has_pca {
            (
                Some(PcaModel::load(dir, "audio_pca")?),
                Some(PcaModel::load(dir, "visual_pca")?),
            )
        } else {
            (None, None)
        };
        Ok(GbtPipeline {
            config: stored.config,
            task: stored.task,
            classes: stored.classes,
            audio_pca,
            visual_pca,
            ensemble: stored.ensemble,
            trials: stored.trials,
        })
    }
}
