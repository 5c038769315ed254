//! Multimodal samples, the on-disk dataset format, the synthetic cohort
//! generator, and speaker-independent splitting.

mod kinds;
mod manifest;
pub mod mpf;
mod split;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

pub use kinds::{FeatureKind, Modality, TaskKind, Track};
pub use manifest::{
    load_manifest, DatasetManifest, FeatureDecl, ManifestEntry, SampleFiles, TaskSpec,
    MANIFEST_FILE,
};
pub use split::{assert_speaker_disjoint, kfold_by_speaker, split_by_speaker, Split};
pub use synth::{synth_generate, SynthConfig};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// A variable-length sequence of window-level feature vectors (frames × dim).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub kind: FeatureKind,
    pub window_seconds: u32,
    pub values: Matrix,
}

impl FeatureSequence {
    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }
}

/// One recording of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub speaker: String,
    pub audio: FeatureSequence,
    pub visual: FeatureSequence,
    /// Personalized text embedding, one per subject.
    pub text: Vec<f64>,
    pub labels: BTreeMap<TaskKind, usize>,
}

impl Sample {
    pub fn label(&self, task: TaskKind) -> Result<usize> {
        self.labels
            .get(&task)
            .copied()
            .ok_or_else(|| Error::Config(format!("sample {} has no {task} label", self.id)))
    }
}

/// An in-memory dataset. Samples are shared, so subsets are cheap.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub track: Track,
    pub window_seconds: u32,
    pub tasks: Vec<TaskSpec>,
    pub audio_kind: FeatureKind,
    pub visual_kind: FeatureKind,
    pub text_kind: FeatureKind,
    pub samples: Vec<Arc<Sample>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn task(&self, kind: TaskKind) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.name == kind)
            .ok_or_else(|| Error::Config(format!("task {kind} is not declared by this dataset")))
    }

    /// The first declared task.
    pub fn primary_task(&self) -> TaskKind {
        self.tasks[0].name
    }

    pub fn labels(&self, task: TaskKind) -> Result<Vec<usize>> {
        self.samples.iter().map(|s| s.label(task)).collect()
    }

    /// Distinct speaker ids in sorted order.
    pub fn speakers(&self) -> Vec<String> {
        self.samples
            .iter()
            .map(|s| s.speaker.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (
            self.audio_kind.dim(self.track),
            self.visual_kind.dim(self.track),
            self.text_kind.dim(self.track),
        )
    }

    /// Dataset restricted to the given sample indices.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| Arc::clone(&self.samples[i])).collect(),
            ..self.empty_like()
        }
    }

    pub fn empty_like(&self) -> Dataset {
        Dataset {
            track: self.track,
            window_seconds: self.window_seconds,
            tasks: self.tasks.clone(),
            audio_kind: self.audio_kind,
            visual_kind: self.visual_kind,
            text_kind: self.text_kind,
            samples: Vec::new(),
        }
    }

    /// Manifest describing this dataset with the standard file layout.
    pub fn manifest(&self) -> DatasetManifest {
        let decl = |kind: FeatureKind| FeatureDecl {
            modality: kind.modality(),
            kind,
            dim: kind.dim(self.track),
        };
        DatasetManifest {
            track: self.track,
            window_seconds: self.window_seconds,
            tasks: self.tasks.clone(),
            features: vec![decl(self.audio_kind), decl(self.visual_kind), decl(self.text_kind)],
            samples: self
                .samples
                .iter()
                .map(|s| ManifestEntry {
                    id: s.id.clone(),
                    speaker: s.speaker.clone(),
                    files: SampleFiles {
                        audio: format!("features/{}.audio.mpf", s.id),
                        visual: format!("features/{}.visual.mpf", s.id),
                        text: format!("features/{}.text.mpf", s.id),
                    },
                    labels: s.labels.clone(),
                })
                .collect(),
        }
    }

    /// Writes `manifest.json` plus one MPF1 file per sample and modality.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let manifest = self.manifest();
        manifest.validate()?;
        let features = dir.join("features");
        std::fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;
        for (s, entry) in self.samples.iter().zip(&manifest.samples) {
            mpf::write(&dir.join(&entry.files.audio), &s.audio.values)?;
            mpf::write(&dir.join(&entry.files.visual), &s.visual.values)?;
            mpf::write(&dir.join(&entry.files.text), &Matrix::row_vector(&s.text))?;
        }
        manifest.save(dir)
    }

    /// Loads a dataset directory (or a path to its `manifest.json`).
    pub fn load(path: &Path) -> Result<Dataset> {
        let manifest = load_manifest(path)?;
        let mpath = manifest::manifest_path(path);
        let root = mpath.parent().unwrap_or(Path::new("."));
        let audio_kind = manifest.feature(Modality::Audio)?.kind;
        let visual_kind = manifest.feature(Modality::Visual)?.kind;
        let text_kind = manifest.feature(Modality::Text)?.kind;
        let mut samples = Vec::with_capacity(manifest.samples.len());
        for e in &manifest.samples {
            let audio = mpf::read(&root.join(&e.files.audio))?;
            let visual = mpf::read(&root.join(&e.files.visual))?;
            let text = mpf::read(&root.join(&e.files.text))?;
            samples.push(Arc::new(Sample {
                id: e.id.clone(),
                speaker: e.speaker.clone(),
                audio: FeatureSequence {
                    kind: audio_kind,
                    window_seconds: manifest.window_seconds,
                    values: audio,
                },
                visual: FeatureSequence {
                    kind: visual_kind,
                    window_seconds: manifest.window_seconds,
                    values: visual,
                },
                text: text.into_vec(),
                labels: e.labels.clone(),
            }));
        }
        Ok(Dataset {
            track: manifest.track,
            window_seconds: manifest.window_seconds,
            tasks: manifest.tasks,
            audio_kind,
            visual_kind,
            text_kind,
            samples,
        })
    }
}
