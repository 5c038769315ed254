use std::collections::{BTreeMap, BTreeSet};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Sample indices of a train/dev partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
}

impl Split {
    pub fn apply(&self, ds: &Dataset) -> (Dataset, Dataset) {
        (ds.subset(&self.train), ds.subset(&self.dev))
    }
}

/// Panics if any speaker has samples on both sides of `split`.
pub fn assert_speaker_disjoint(ds: &Dataset, split: &Split) {
    let train: BTreeSet<&str> = split.train.iter().map(|&i| ds.samples[i].speaker.as_str()).collect();
    for &i in &split.dev {
        let spk = ds.samples[i].speaker.as_str();
        assert!(!train.contains(spk), "speaker {spk} leaks across the split");
    }
}

/// Speakers grouped by the class of their first sample on the primary task,
/// each group shuffled. Groups are ordered by class index.
fn shuffled_strata(ds: &Dataset, rng: &mut Rng) -> Vec<Vec<String>> {
    let task = ds.primary_task();
    let mut strata: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for s in &ds.samples {
        if seen.insert(s.speaker.clone()) {
            let class = s.labels.get(&task).copied().unwrap_or(0);
            strata.entry(class).or_default().insert(s.speaker.clone());
        }
    }
    strata
        .into_values()
        .map(|set| {
            let mut v: Vec<String> = set.into_iter().collect();
            rng.shuffle(&mut v);
            v
        })
        .collect()
}

fn indices_for(ds: &Dataset, speakers: &BTreeSet<String>) -> (Vec<usize>, Vec<usize>) {
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for (i, s) in ds.samples.iter().enumerate() {
        if speakers.contains(&s.speaker) {
            inside.push(i);
        } else {
            outside.push(i);
        }
    }
    (inside, outside)
}

/// Speaker-disjoint train/dev split.
///
/// The dev side receives `round(dev_fraction × speakers)` speakers (at least
/// one, at most all but one), drawn per class in proportion to each class's
/// speaker count.
pub fn split_by_speaker(ds: &Dataset, dev_fraction: f64, seed: u64) -> Result<Split> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::Split(format!(
            "dev fraction must lie in (0, 1), got {dev_fraction}"
        )));
    }
    let mut rng = Rng::new(seed).substream("split");
    let strata = shuffled_strata(ds, &mut rng);
    let total: usize = strata.iter().map(Vec::len).sum();
    if total < 2 {
        return Err(Error::Split(format!("need at least 2 speakers, found {total}")));
    }
    let n_dev = ((dev_fraction * total as f64).round() as usize).clamp(1, total - 1);

    let proportions: Vec<f64> = strata.iter().map(|s| s.len() as f64 / total as f64).collect();
    let quota = super::synth::largest_remainder(&proportions, n_dev);
    let dev: BTreeSet<String> = strata
        .iter()
        .zip(&quota)
        .flat_map(|(s, &q)| s.iter().take(q).cloned())
        .collect();
    let (dev, train) = indices_for(ds, &dev);
    let split = Split { train, dev };
    assert_speaker_disjoint(ds, &split);
    Ok(split)
}

/// `k` speaker-disjoint folds. Speakers are dealt round-robin, class by class,
/// so fold sizes differ by at most one speaker and classes spread evenly.
pub fn kfold_by_speaker(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::Split(format!("k must be at least 2, got {k}")));
    }
    let mut rng = Rng::new(seed).substream("kfold");
    let strata = shuffled_strata(ds, &mut rng);
    let total: usize = strata.iter().map(Vec::len).sum();
    if k > total {
        return Err(Error::Split(format!("{k} folds requested for {total} speakers")));
    }
    let mut folds: Vec<BTreeSet<String>> = vec![BTreeSet::new(); k];
    for (i, spk) in strata.into_iter().flatten().enumerate() {
        folds[i % k].insert(spk);
    }
    Ok(folds
        .iter()
        .map(|f| {
            let (dev, train) = indices_for(ds, f);
            let split = Split { train, dev };
            assert_speaker_disjoint(ds, &split);
            split
        })
        .collect())
}
