use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Track {
    Elderly,
    Young,
}

impl Track {
    pub fn as_str(self) -> &'static str {
        match self {
            Track::Elderly => "elderly",
            Track::Young => "young",
        }
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Track {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "elderly" => Ok(Track::Elderly),
            "young" => Ok(Track::Young),
            other => Err(Error::Config(format!("unknown track {other:?}"))),
        }
    }
}

/// Depression-severity classification task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Ternary,
    Quinary,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Binary => "binary",
            TaskKind::Ternary => "ternary",
            TaskKind::Quinary => "quinary",
        }
    }

    pub fn class_count(self) -> usize {
        self.class_names().len()
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            TaskKind::Binary => &["Normal", "Depressed"],
            TaskKind::Ternary => &["Normal", "Mild", "Severe"],
            TaskKind::Quinary => &["Normal", "Mild", "Moderate", "Severe", "Very Severe"],
        }
    }

    /// Whether the task is defined for `track`; quinary labels exist only for
    /// the elderly cohort.
    pub fn available_for(self, track: Track) -> bool {
        !(self == TaskKind::Quinary && track == Track::Young)
    }

    /// Reference cohort: per-class sample counts and speaker counts.
    pub fn reference_cohort(self, track: Track) -> Option<(&'static [usize], &'static [usize])> {
        match (track, self) {
            (Track::Elderly, TaskKind::Binary) => Some((&[258, 79], &[68, 21])),
            (Track::Elderly, TaskKind::Ternary) => Some((&[138, 120, 79], &[37, 31, 21])),
            (Track::Elderly, TaskKind::Quinary) => Some((&[235, 68, 23, 8, 3], &[62, 18, 6, 2, 1])),
            (Track::Young, TaskKind::Binary) => Some((&[135, 129], &[45, 43])),
            (Track::Young, TaskKind::Ternary) => Some((&[135, 99, 30], &[45, 33, 10])),
            (Track::Young, TaskKind::Quinary) => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(TaskKind::Binary),
            "ternary" | "trinary" => Ok(TaskKind::Ternary),
            "quinary" => Ok(TaskKind::Quinary),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Visual,
    Text,
}

/// Pre-extracted feature families and their published dimensionalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Mfcc,
    Opensmile,
    Wav2vec2,
    Densenet,
    Resnet,
    Openface,
    Roberta,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 7] = [
        FeatureKind::Mfcc,
        FeatureKind::Opensmile,
        FeatureKind::Wav2vec2,
        FeatureKind::Densenet,
        FeatureKind::Resnet,
        FeatureKind::Openface,
        FeatureKind::Roberta,
    ];

    pub fn modality(self) -> Modality {
        match self {
            FeatureKind::Mfcc | FeatureKind::Opensmile | FeatureKind::Wav2vec2 => Modality::Audio,
            FeatureKind::Densenet | FeatureKind::Resnet | FeatureKind::Openface => Modality::Visual,
            FeatureKind::Roberta => Modality::Text,
        }
    }

    pub fn dim(self, track: Track) -> usize {
        match self {
            FeatureKind::Mfcc => 64,
            FeatureKind::Opensmile => 6373,
            FeatureKind::Wav2vec2 => 512,
            FeatureKind::Densenet => match track {
                Track::Elderly => 1024,
                Track::Young => 1000,
            },
            FeatureKind::Resnet => 1000,
            FeatureKind::Openface => 709,
            FeatureKind::Roberta => 1024,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::Opensmile => "opensmile",
            FeatureKind::Wav2vec2 => "wav2vec2",
            FeatureKind::Densenet => "densenet",
            FeatureKind::Resnet => "resnet",
            FeatureKind::Openface => "openface",
            FeatureKind::Roberta => "roberta",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == lower)
            .ok_or_else(|| Error::Config(format!("unknown feature kind {s:?}")))
    }
}
