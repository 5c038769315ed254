#![allow(dead_code)]

use multifuse::dataset::{synth_generate, Dataset, FeatureKind, Sample, SynthConfig, TaskKind, Track};

/// Frame means of audio then visual. Text is left out: its noise is per
/// speaker and not averaged over frames.
pub fn pooled(s: &Sample) -> Vec<f64> {
    let mut v = s.audio.values.column_means();
    v.extend(s.visual.values.column_means());
    v
}

/// Accuracy on `test` of a nearest-class-mean classifier fit on `train`.
pub fn nearest_centroid(train: &Dataset, test: &Dataset, task: TaskKind) -> f64 {
    let classes = train.task(task).unwrap().classes;
    let dim = pooled(&train.samples[0]).len();
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for s in &train.samples {
        let y = s.label(task).unwrap();
        counts[y] += 1;
        for (a, b) in sums[y].iter_mut().zip(pooled(s)) {
            *a += b;
        }
    }
    let dist = |c: usize, v: &[f64]| -> f64 {
        sums[c]
            .iter()
            .zip(v)
            .map(|(m, x)| (m / counts[c] as f64 - x).powi(2))
            .sum()
    };
    let correct = test
        .samples
        .iter()
        .filter(|s| {
            let v = pooled(s);
            let best = (0..classes)
                .filter(|&c| counts[c] > 0)
                .min_by(|&a, &b| dist(a, &v).total_cmp(&dist(b, &v)))
                .unwrap();
            best == s.label(task).unwrap()
        })
        .count();
    correct as f64 / test.len() as f64
}

/// A small young-binary cohort with low-dimensional features.
pub fn small_cohort(n: usize, separability: f64, seed: u64) -> Dataset {
    let mut cfg = SynthConfig::reference(Track::Young, TaskKind::Binary)
        .unwrap()
        .with_total(n);
    cfg.frames = (2, 4);
    cfg.audio = FeatureKind::Mfcc;
    cfg.visual = FeatureKind::Openface;
    cfg.separability = separability;
    cfg.seed = seed;
    synth_generate(&cfg).unwrap()
}

/// Every file under `root`, keyed by relative path.
pub fn read_tree(root: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
