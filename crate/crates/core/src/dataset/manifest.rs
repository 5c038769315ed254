use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::kinds::{FeatureKind, Modality, TaskKind, Track};
use super::mpf;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub name: TaskKind,
    pub classes: usize,
    pub class_names: Vec<String>,
}

impl TaskSpec {
    pub fn new(kind: TaskKind) -> Self {
        TaskSpec {
            name: kind,
            classes: kind.class_count(),
            class_names: kind.class_names().iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureDecl {
    pub modality: Modality,
    pub kind: FeatureKind,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleFiles {
    pub audio: String,
    pub visual: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker: String,
    pub files: SampleFiles,
    pub labels: BTreeMap<TaskKind, usize>,
}

/// On-disk description of a dataset directory (`manifest.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub track: Track,
    pub window_seconds: u32,
    pub tasks: Vec<TaskSpec>,
    pub features: Vec<FeatureDecl>,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn feature(&self, modality: Modality) -> Result<FeatureDecl> {
        self.features
            .iter()
            .copied()
            .find(|f| f.modality == modality)
            .ok_or_else(|| Error::Manifest(format!("no {modality:?} feature declared")))
    }

    pub fn task(&self, kind: TaskKind) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.name == kind)
    }

    /// Checks internal consistency without touching feature files.
    pub fn validate(&self) -> Result<()> {
        if self.window_seconds != 1 && self.window_seconds != 5 {
            return Err(Error::Manifest(format!(
                "window_seconds must be 1 or 5, got {}",
                self.window_seconds
            )));
        }
        if self.tasks.is_empty() {
            return Err(Error::Manifest("no tasks declared".into()));
        }
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t.name) {
                return Err(Error::Manifest(format!("task {} declared twice", t.name)));
            }
            if !t.name.available_for(self.track) {
                return Err(Error::Manifest(format!(
                    "task {} is not defined for track {}",
                    t.name, self.track
                )));
            }
            if t.classes != t.name.class_count() || t.class_names.len() != t.classes {
                return Err(Error::Manifest(format!(
                    "task {} must have {} classes",
                    t.name,
                    t.name.class_count()
                )));
            }
        }
        for modality in [Modality::Audio, Modality::Visual, Modality::Text] {
            let decls: Vec<_> = self.features.iter().filter(|f| f.modality == modality).collect();
            if decls.len() != 1 {
                return Err(Error::Manifest(format!(
                    "expected exactly one {modality:?} feature, found {}",
                    decls.len()
                )));
            }
            let d = decls[0];
            if d.kind.modality() != modality {
                return Err(Error::Manifest(format!(
                    "{} is not a {modality:?} feature",
                    d.kind
                )));
            }
            let expected = d.kind.dim(self.track);
            if d.dim != expected {
                return Err(Error::Manifest(format!(
                    "{} on track {} has dimension {expected}, manifest declares {}",
                    d.kind, self.track, d.dim
                )));
            }
        }
        let mut ids = BTreeSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate sample id {}", s.id)));
            }
            for t in &self.tasks {
                match s.labels.get(&t.name) {
                    Some(&c) if c < t.classes => {}
                    Some(&c) => {
                        return Err(Error::Manifest(format!(
                            "sample {}: label {c} out of range for {}",
                            s.id, t.name
                        )))
                    }
                    None => {
                        return Err(Error::Manifest(format!(
                            "sample {} has no label for task {}",
                            s.id, t.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Resolves the manifest path: either a `manifest.json` file or a directory holding one.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Parses and fully validates a manifest, including the header of every
/// referenced feature file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(path);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    manifest.validate()?;

    let root = path.parent().unwrap_or(Path::new("."));
    let audio = manifest.feature(Modality::Audio)?;
    let visual = manifest.feature(Modality::Visual)?;
    let text_decl = manifest.feature(Modality::Text)?;
    for s in &manifest.samples {
        for (file, decl, frames_one) in [
            (&s.files.audio, audio, false),
            (&s.files.visual, visual, false),
            (&s.files.text, text_decl, true),
        ] {
            let (rows, cols) = mpf::read_shape(&root.join(file))?;
            if cols != decl.dim {
                return Err(Error::Dimension(format!(
                    "{file}: {} features have dimension {}, file has {cols} columns",
                    decl.kind, decl.dim
                )));
            }
            if rows == 0 || (frames_one && rows != 1) {
                return Err(Error::Dimension(format!(
                    "{file}: unexpected row count {rows}"
                )));
            }
        }
    }
    Ok(manifest)
}
