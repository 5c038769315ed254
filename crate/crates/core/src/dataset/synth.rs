use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::kinds::{FeatureKind, Modality, TaskKind, Track};
use super::manifest::TaskSpec;
use super::{mpf, Dataset, FeatureSequence, Sample};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, Rng};

/// Parameters of the synthetic cohort generator.
///
/// Each class is a Gaussian cloud whose mean moves by `separability` per class
/// step along one fixed random direction per modality. Every speaker adds its
/// own offset with per-coordinate scale `speaker_effect`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub track: Track,
    pub task: TaskKind,
    pub total_samples: usize,
    pub proportions: Vec<f64>,
    pub speakers_per_class: Vec<usize>,
    /// Inclusive frame-count range per sample.
    pub frames: (usize, usize),
    pub audio: FeatureKind,
    pub visual: FeatureKind,
    pub window_seconds: u32,
    pub separability: f64,
    pub speaker_effect: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// Configuration mirroring the reference cohort's class counts and
    /// speaker counts for `track` and `task`.
    pub fn reference(track: Track, task: TaskKind) -> Result<Self> {
        let (counts, speakers) = task.reference_cohort(track).ok_or_else(|| {
            Error::Config(format!("task {task} is not defined for track {track}"))
        })?;
        let total: usize = counts.iter().sum();
        Ok(SynthConfig {
            track,
            task,
            total_samples: total,
            proportions: counts.iter().map(|&c| c as f64 / total as f64).collect(),
            speakers_per_class: speakers.to_vec(),
            frames: (8, 30),
            audio: FeatureKind::Wav2vec2,
            visual: FeatureKind::Densenet,
            window_seconds: 5,
            separability: 1.0,
            speaker_effect: 0.5,
            seed: 0,
        })
    }

    /// Resizes the cohort to `n` samples, scaling speaker counts with it.
    pub fn with_total(mut self, n: usize) -> Self {
        if n == self.total_samples || self.total_samples == 0 {
            return self;
        }
        let counts = largest_remainder(&self.proportions, n);
        let scale = n as f64 / self.total_samples as f64;
        self.speakers_per_class = self
            .speakers_per_class
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| ((s as f64 * scale).round() as usize).clamp(1, c.max(1)))
            .collect();
        self.total_samples = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let classes = self.task.class_count();
        if !self.task.available_for(self.track) {
            return Err(Error::Config(format!(
                "task {} is not defined for track {}",
                self.task, self.track
            )));
        }
        if self.proportions.len() != classes || self.speakers_per_class.len() != classes {
            return Err(Error::Config(format!(
                "{} needs {classes} proportions and speaker counts",
                self.task
            )));
        }
        let sum: f64 = self.proportions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.proportions.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Config(format!(
                "class proportions must be non-negative and sum to 1 (sum {sum})"
            )));
        }
        if self.speakers_per_class.contains(&0) {
            return Err(Error::Config("every class needs at least one speaker".into()));
        }
        let counts = largest_remainder(&self.proportions, self.total_samples);
        for (c, (&n, &s)) in counts.iter().zip(&self.speakers_per_class).enumerate() {
            if n < s {
                return Err(Error::Config(format!(
                    "class {c} has {n} samples for {s} speakers"
                )));
            }
        }
        if self.frames.0 == 0 || self.frames.0 > self.frames.1 {
            return Err(Error::Config(format!("bad frame range {:?}", self.frames)));
        }
        if self.audio.modality() != Modality::Audio || self.visual.modality() != Modality::Visual {
            return Err(Error::Config(format!(
                "{} / {} is not an audio / visual pair",
                self.audio, self.visual
            )));
        }
        if self.window_seconds != 1 && self.window_seconds != 5 {
            return Err(Error::Config("window_seconds must be 1 or 5".into()));
        }
        if !(self.separability >= 0.0) || !(self.speaker_effect >= 0.0) {
            return Err(Error::Config(
                "separability and speaker effect must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Integer counts summing to `total` that best match `proportions`: floors
/// first, then the leftover units go to the largest fractional parts (lowest
/// index on ties).
pub(crate) fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn unit_direction(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates a synthetic cohort in memory. Values are rounded to `f32` so the
/// dataset is bit-identical after a save/load cycle.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let classes = cfg.task.class_count();
    let counts = largest_remainder(&cfg.proportions, cfg.total_samples);
    let root = Rng::new(cfg.seed);

    let text_kind = FeatureKind::Roberta;
    let dims = [
        cfg.audio.dim(cfg.track),
        cfg.visual.dim(cfg.track),
        text_kind.dim(cfg.track),
    ];
    let mut dir_rng = root.substream("directions");
    let directions: Vec<Vec<f64>> = dims.iter().map(|&d| unit_direction(&mut dir_rng, d)).collect();
    let centre = (classes as f64 - 1.0) / 2.0;
    let class_shift = |c: usize| cfg.separability * (c as f64 - centre);

    let mut samples = Vec::with_capacity(cfg.total_samples);
    let mut speaker_index = 0usize;
    for class in 0..classes {
        let n_speakers = cfg.speakers_per_class[class];
        let shift = class_shift(class);
        for s in 0..n_speakers {
            speaker_index += 1;
            let speaker = format!("spk{speaker_index:03}");
            let mut rng = root.fork(speaker_index as u64);
            let n_samples = counts[class] / n_speakers + usize::from(s < counts[class] % n_speakers);

            let offsets: Vec<Vec<f64>> = dims[..2]
                .iter()
                .map(|&d| (0..d).map(|_| cfg.speaker_effect * rng.normal()).collect())
                .collect();
            let text: Vec<f64> = directions[2]
                .iter()
                .map(|u| f64::from((shift * u + rng.normal()) as f32))
                .collect();

            for _ in 0..n_samples {
                let frames = cfg.frames.0 + rng.below(cfg.frames.1 - cfg.frames.0 + 1);
                let mut streams = Vec::with_capacity(2);
                for m in 0..2 {
                    let d = dims[m];
                    let mut values = Matrix::zeros(frames, d);
                    for t in 0..frames {
                        let row = values.row_mut(t);
                        for j in 0..d {
                            row[j] = shift * directions[m][j] + offsets[m][j] + rng.normal();
                        }
                    }
                    streams.push(mpf::quantize(&values));
                }
                let visual = streams.pop().unwrap();
                let audio = streams.pop().unwrap();
                let id = format!("s{:04}", samples.len() + 1);
                samples.push(Arc::new(Sample {
                    id,
                    speaker: speaker.clone(),
                    audio: FeatureSequence {
                        kind: cfg.audio,
                        window_seconds: cfg.window_seconds,
                        values: audio,
                    },
                    visual: FeatureSequence {
                        kind: cfg.visual,
                        window_seconds: cfg.window_seconds,
                        values: visual,
                    },
                    text: text.clone(),
                    labels: BTreeMap::from([(cfg.task, class)]),
                }));
            }
        }
    }

    Ok(Dataset {
        track: cfg.track,
        window_seconds: cfg.window_seconds,
        tasks: vec![TaskSpec::new(cfg.task)],
        audio_kind: cfg.audio,
        visual_kind: cfg.visual,
        text_kind,
        samples,
    })
}
