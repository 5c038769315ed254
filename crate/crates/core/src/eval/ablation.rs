use serde::{Deserialize, Serialize};

use super::cv::Trainer;
use super::metrics::{compute_metrics, Metrics};
use super::models::{config_digest, ModelSpec};
use crate::dataset::{split_by_speaker, Dataset, TaskKind};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub label: String,
    /// Model spec; parsed per row so a malformed row fails on its own.
    pub spec: serde_json::Value,
}

/// Rows share one seed and one speaker-independent train/dev split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSuite {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dev_fraction")]
    pub dev_fraction: f64,
    /// Defaults to the dataset's first task.
    #[serde(default)]
    pub task: Option<TaskKind>,
    pub rows: Vec<AblationRow>,
}

fn default_dev_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub label: String,
    pub model: Option<String>,
    /// Digest of the row spec with the suite seed applied.
    pub digest: Option<String>,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub name: String,
    pub seed: u64,
    pub task: Option<TaskKind>,
    pub rows: Vec<AblationResult>,
}

fn run_row(row: &AblationRow, train: &Dataset, dev: &Dataset, task: TaskKind, seed: u64, out: &mut AblationResult) -> Result<Metrics> {
    let spec: ModelSpec = serde_json::from_value(row.spec.clone())?;
    let spec = spec.with_seed(seed);
    out.model = Some(spec.name().to_string());
    out.digest = Some(config_digest(&spec)?);
    let preds = spec.fit_predict(train, dev, task, seed)?;
    let mut m = compute_metrics(&preds.classes, &dev.labels(task)?, dev.task(task)?.classes)?;
    m.unparsed = preds.unparsed;
    Ok(m)
}

/// Runs every row on one shared split. A failing row is recorded with its
/// error and the suite continues.
pub fn run_ablation(suite: &AblationSuite, ds: &Dataset) -> Result<AblationReport> {
    let mut report = AblationReport {
        name: suite.name.clone(),
        seed: suite.seed,
        task: None,
        rows: Vec::with_capacity(suite.rows.len()),
    };
    if suite.rows.is_empty() {
        return Ok(report);
    }
    let task = suite.task.unwrap_or_else(|| ds.primary_task());
    ds.task(task)?;
    report.task = Some(task);
    let split = split_by_speaker(ds, suite.dev_fraction, suite.seed)?;
    let (train, dev) = split.apply(ds);
    for row in &suite.rows {
        let mut result = AblationResult {
            label: row.label.clone(),
            model: None,
            digest: None,
            metrics: None,
            error: None,
        };
        match run_row(row, &train, &dev, task, suite.seed, &mut result) {
            Ok(m) => {
                log::info!("{}: {}", row.label, m.summary());
                result.metrics = Some(m);
            }
            Err(e) => {
                log::warn!("{} failed: {e}", row.label);
                result.error = Some(e.to_string());
            }
        }
        report.rows.push(result);
    }
    Ok(report)
}

impl AblationReport {
    fn cells(&self) -> Vec<[String; 6]> {
        self.rows
            .iter()
            .map(|r| {
                let digest = r.digest.as_deref().map_or(String::new(), |d| d[..12].to_string());
                let model = r.model.clone().unwrap_or_default();
                match (&r.metrics, &r.error) {
                    (Some(m), _) => [
                        r.label.clone(),
                        model,
                        format!("{:.2}", 100.0 * m.weighted_f1),
                        format!("{:.2}", 100.0 * m.unweighted_f1),
                        format!("{:.2}", 100.0 * m.accuracy),
                        digest,
                    ],
                    (None, e) => [
                        r.label.clone(),
                        model,
                        "failed".into(),
                        e.clone().unwrap_or_default(),
                        String::new(),
                        digest,
                    ],
                }
            })
            .collect()
    }

    /// Aligned plain-text table, scores in percent.
    pub fn to_table(&self) -> String {
        let header = ["Method", "Model", "W_F1", "U_F1", "ACC", "Digest"].map(String::from);
        let rows = self.cells();
        let mut widths = header.clone().map(|h| h.chars().count());
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cells: &[String; 6]| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if (2..5).contains(&i) {
                        format!("{c:>w$}")
                    } else {
                        format!("{c:<w$}")
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = line(&header) + "\n";
        out += &(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ") + "\n");
        for r in &rows {
            out += &(line(r) + "\n");
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "model", "weighted_f1", "unweighted_f1", "accuracy", "unparsed", "digest", "error"])?;
        for r in &self.rows {
            let m = r.metrics.as_ref();
            let f = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            w.write_record([
                r.label.clone(),
                r.model.clone().unwrap_or_default(),
                f(m.map(|m| m.weighted_f1)),
                f(m.map(|m| m.unweighted_f1)),
                f(m.map(|m| m.accuracy)),
                m.map_or(String::new(), |m| m.unparsed.to_string()),
                r.digest.clone().unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthConfig, Track};

    fn data() -> Dataset {
        let mut cfg = SynthConfig::reference(Track::Elderly, TaskKind::Binary).unwrap().with_total(80);
        cfg.frames = (2, 3);
        cfg.separability = 2.0;
        synth_generate(&cfg).unwrap()
    }

    #[test]
    fn empty_suite_gives_empty_report() {
        let suite: AblationSuite = serde_json::from_str(r#"{"rows": []}"#).unwrap();
        let r = run_ablation(&suite, &data()).unwrap();
        assert!(r.rows.is_empty());
        assert_eq!(r.to_table().lines().count(), 2);
    }

    #[test]
    fn failing_row_is_recorded_and_suite_continues() {
        let suite: AblationSuite = serde_json::from_value(serde_json::json!({
            "seed": 3,
            "rows": [
                {"label": "bad", "spec": {"model": "gbt", "config": {"nonsense": 1}}},
                {"label": "gbt", "spec": {"model": "gbt", "config": {"pca_components": 4,
                    "booster": {"rounds": 20}}}},
            ]
        }))
        .unwrap();
        let r = run_ablation(&suite, &data()).unwrap();
        assert!(r.rows[0].error.is_some() && r.rows[0].metrics.is_none());
        assert!(r.rows[1].metrics.is_some(), "{:?}", r.rows[1].error);
        let table = r.to_table();
        assert!(table.contains("failed") && table.lines().count() == 4);
        assert_eq!(r.to_csv().unwrap().lines().count(), 3);
        // rerun reproduces the row
        let again = run_ablation(&suite, &data()).unwrap();
        assert_eq!(again.rows[1], r.rows[1]);
    }
}
