use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use multifuse::dataset::{split_by_speaker, synth_generate, Dataset, SynthConfig, TaskKind, Track};
use multifuse::eval::{compute_metrics, config_digest, run_ablation, run_cv, AblationSuite, Metrics, ModelSpec};
use multifuse::fusenet::{self, FusionConfig, FusionModel};
use multifuse::gbt::{GbtPipeline, GbtPipelineConfig};
use multifuse::llm_toy::{self, LlmToyConfig, Stages, ToyLlm};

use crate::config::{load_value, typed};
use crate::exit::CliError;
use crate::{AblateArgs, ConfigArgs, CvArgs, EvalArgs, GradcheckArgs, ModelKind, SplitPart, SynthArgs, TrainArgs};

pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub command: String,
    pub spec: ModelSpec,
    pub digest: String,
    pub seed: u64,
    pub data: PathBuf,
    pub task: TaskKind,
    pub dev_fraction: Option<f64>,
    pub k: Option<usize>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write(path, serde_json::to_string_pretty(value)? + "\n")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e: T::Err| CliError::config(e.to_string()))
}

pub fn synth(a: SynthArgs) -> Result<(), CliError> {
    let track: Track = parse(&a.track)?;
    let task: TaskKind = parse(&a.task)?;
    let mut cfg = SynthConfig::reference(track, task)?;
    if let Some(n) = a.n {
        cfg = cfg.with_total(n);
    }
    if let Some(d) = a.delta {
        cfg.separability = d;
    }
    if let Some(s) = a.speaker_effect {
        cfg.speaker_effect = s;
    }
    if let Some(w) = a.window {
        cfg.window_seconds = w;
    }
    if let Some(k) = &a.audio {
        cfg.audio = parse(k)?;
    }
    if let Some(k) = &a.visual {
        cfg.visual = parse(k)?;
    }
    if let Some(f) = &a.frames {
        let (lo, hi) = f
            .split_once("..")
            .ok_or_else(|| CliError::config(format!("--frames `{f}` is not LO..HI")))?;
        cfg.frames = (parse(lo)?, parse(hi)?);
    }
    cfg.seed = a.seed.seed;
    let ds = synth_generate(&cfg)?;
    ds.save(&a.out)?;
    write_json(&a.out.join("synth.json"), &cfg)?;
    let labels = ds.labels(task)?;
    let counts: Vec<String> = (0..task.class_count())
        .map(|c| labels.iter().filter(|&&y| y == c).count().to_string())
        .collect();
    println!(
        "{} samples ({}) from {} speakers written to {}",
        ds.len(),
        counts.join("/"),
        ds.speakers().len(),
        a.out.display()
    );
    Ok(())
}

fn spec_for(model: ModelKind, cfg: &ConfigArgs, stages: Option<Stages>, seed: u64) -> Result<ModelSpec, CliError> {
    let value = load_value(cfg.config.as_deref(), &cfg.overrides)?;
    let spec = match model {
        ModelKind::Gbt => {
            let config: GbtPipelineConfig = typed(value)?;
            config.booster.validate()?;
            ModelSpec::Gbt { config }
        }
        ModelKind::Fusenet => {
            let config: FusionConfig = typed(value)?;
            config.validate()?;
            ModelSpec::Fusenet { config, cv_folds: None }
        }
        ModelKind::LlmToy => {
            let config: LlmToyConfig = typed(value)?;
            config.validate()?;
            ModelSpec::LlmToy {
                config,
                stages: stages.unwrap_or(Stages::Both),
            }
        }
    };
    Ok(spec.with_seed(seed))
}

fn resolve_task(ds: &Dataset, task: Option<&str>) -> Result<TaskKind, CliError> {
    let task = match task {
        Some(t) => parse(t)?,
        None => ds.primary_task(),
    };
    ds.task(task)?;
    Ok(task)
}

fn print_metrics(m: &Metrics) {
    println!("{}", m.summary());
}

fn write_metrics(dir: &Path, ds: &Dataset, task: TaskKind, m: &Metrics) -> Result<(), CliError> {
    write_json(&dir.join("metrics.json"), m)?;
    write(&dir.join("confusion.csv"), m.confusion_csv(&ds.task(task)?.class_names)?)
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let stages = match a.stages.as_deref() {
        None => None,
        Some("none") => Some(Stages::None),
        Some("one") => Some(Stages::One),
        Some("both") => Some(Stages::Both),
        Some(other) => return Err(CliError::config(format!("--stages `{other}` is not none, one or both"))),
    };
    if stages.is_some() && a.model != ModelKind::LlmToy {
        return Err(CliError::config("--stages applies to llm-toy only"));
    }
    let spec = spec_for(a.model, &a.config, stages, a.seed.seed)?;
    let digest = config_digest(&spec)?;
    let ds = Dataset::load(&a.data)?;
    let task = resolve_task(&ds, a.task.as_deref())?;
    let split = split_by_speaker(&ds, a.dev_fraction, a.seed.seed)?;
    if a.dry_run {
        println!(
            "dry run: {} config ok (digest {digest}); {} train / {} dev samples",
            spec.name(),
            split.train.len(),
            split.dev.len()
        );
        return Ok(());
    }
    let out = a
        .out
        .ok_or_else(|| CliError::config("--out is required unless --dry-run is given"))?;
    let (train_ds, dev_ds) = split.apply(&ds);
    create_dir(&out)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    let labels = dev_ds.labels(task)?;
    let classes = ds.task(task)?.classes;
    let metrics = match &spec {
        ModelSpec::Gbt { config } => {
            let p = GbtPipeline::fit(&train_ds, &dev_ds, task, config)?;
            p.save(&ckpt)?;
            let h = &p.ensemble.history;
            let mut csv = String::from("round,train_mlogloss,dev_mlogloss\n");
            for (i, t) in h.train_mlogloss.iter().enumerate() {
                let d = h.dev_mlogloss.get(i).map_or(String::new(), |v| v.to_string());
                csv += &format!("{},{t},{d}\n", i + 1);
            }
            write(&out.join("history.csv"), csv)?;
            compute_metrics(&p.predict(&dev_ds)?, &labels, classes)?
        }
        ModelSpec::Fusenet { config, .. } => {
            let (model, history) = fusenet::train(&train_ds, &dev_ds, task, config)?;
            model.save(&ckpt)?;
            write(&out.join("history.csv"), history.to_csv()?)?;
            println!(
                "{} parameters, best epoch {} of {}",
                model.parameter_count(),
                history.best_epoch,
                history.epochs.len()
            );
            compute_metrics(&fusenet::predict_dataset(&model, &dev_ds)?, &labels, classes)?
        }
        ModelSpec::LlmToy { config, stages } => {
            let (model, reports) = llm_toy::fit(&train_ds, task, config, *stages)?;
            model.save(&ckpt)?;
            write_json(&out.join("stages.json"), &reports)?;
            let fallback = llm_toy::majority_class(&train_ds.labels(task)?, classes);
            let eval = llm_toy::evaluate(&model, &dev_ds, fallback)?;
            llm_toy::write_jsonl(&out.join("prompts.jsonl"), &eval.records)?;
            eval.metrics
        }
    };
    write_metrics(&out, &ds, task, &metrics)?;
    let record = RunRecord {
        command: "train".into(),
        spec,
        digest,
        seed: a.seed.seed,
        data: a.data.clone(),
        task,
        dev_fraction: Some(a.dev_fraction),
        k: None,
    };
    write_json(&out.join(RUN_FILE), &record)?;
    print_metrics(&metrics);
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let path = a.run.join(RUN_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let record: RunRecord = serde_json::from_str(&text)?;
    let data = a.data.as_ref().unwrap_or(&record.data);
    let ds = Dataset::load(data)?;
    let task = record.task;
    let subset = match a.split {
        SplitPart::All => ds.clone(),
        part => {
            let fraction = record
                .dev_fraction
                .ok_or_else(|| CliError::config("run has no train/dev split; use --split all"))?;
            let (train, dev) = split_by_speaker(&ds, fraction, record.seed)?.apply(&ds);
            if part == SplitPart::Train {
                train
            } else {
                dev
            }
        }
    };
    let ckpt = a.run.join(CHECKPOINT_DIR);
    let classes = ds.task(task)?.classes;
    let labels = subset.labels(task)?;
    let metrics = match &record.spec {
        ModelSpec::Gbt { .. } => compute_metrics(&GbtPipeline::load(&ckpt)?.predict(&subset)?, &labels, classes)?,
        ModelSpec::Fusenet { .. } => {
            let model = FusionModel::load(&ckpt)?;
            compute_metrics(&fusenet::predict_dataset(&model, &subset)?, &labels, classes)?
        }
        ModelSpec::LlmToy { .. } => {
            let model = ToyLlm::load(&ckpt)?;
            let (train, _) = split_by_speaker(&ds, record.dev_fraction.unwrap_or(0.1), record.seed)?.apply(&ds);
            let fallback = llm_toy::majority_class(&train.labels(task)?, classes);
            llm_toy::evaluate(&model, &subset, fallback)?.metrics
        }
    };
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_metrics(out, &ds, task, &metrics)?;
    }
    print_metrics(&metrics);
    Ok(())
}

pub fn cv(a: CvArgs) -> Result<(), CliError> {
    let spec = spec_for(a.model, &a.config, None, a.seed.seed)?;
    let digest = config_digest(&spec)?;
    let ds = Dataset::load(&a.data)?;
    let task = resolve_task(&ds, a.task.as_deref())?;
    let report = run_cv(&ds, task, a.k, &spec, a.seed.seed)?;
    create_dir(&a.out)?;
    write_json(&a.out.join("cv.json"), &report)?;
    let mut csv = String::from("fold,weighted_f1,unweighted_f1,accuracy,samples\n");
    for (i, m) in report.folds.iter().enumerate() {
        csv += &format!("{i},{},{},{},{}\n", m.weighted_f1, m.unweighted_f1, m.accuracy, m.count());
        println!("fold {i}: {}", m.summary());
    }
    write(&a.out.join("folds.csv"), csv)?;
    write_metrics(&a.out, &ds, task, &report.pooled)?;
    let record = RunRecord {
        command: "cv".into(),
        spec,
        digest,
        seed: a.seed.seed,
        data: a.data.clone(),
        task,
        dev_fraction: None,
        k: Some(a.k),
    };
    write_json(&a.out.join(RUN_FILE), &record)?;
    println!(
        "mean W_F1 {:.4} ± {:.4}  U_F1 {:.4} ± {:.4}",
        report.mean.weighted_f1, report.std.weighted_f1, report.mean.unweighted_f1, report.std.unweighted_f1
    );
    print!("pooled ");
    print_metrics(&report.pooled);
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let text =
        std::fs::read_to_string(&a.suite).map_err(|e| CliError::io(format!("{}: {e}", a.suite.display())))?;
    let suite: AblationSuite = serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", a.suite.display())))?;
    let ds = Dataset::load(&a.data)?;
    let report = run_ablation(&suite, &ds)?;
    create_dir(&a.out)?;
    let table = report.to_table();
    write(&a.out.join("ablation.txt"), &table)?;
    write(&a.out.join("ablation.csv"), report.to_csv()?)?;
    write_json(&a.out.join("ablation.json"), &report)?;
    print!("{table}");
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let (model, batch, alpha) = fusenet::tiny_problem(a.seed.seed)?;
    let opts = fusenet::GradCheckOptions {
        eps: a.eps,
        samples: a.samples,
        seed: a.seed.seed,
        corrupt: a.corrupt,
    };
    let report = fusenet::grad_check(&model, &batch, &alpha, opts)?;
    println!(
        "max relative error {:.3e} over {} entries (worst {})",
        report.max_rel_error, report.checked, report.worst
    );
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "gradient check failed: {:.3e} > {:.0e}",
            report.max_rel_error,
            fusenet::GRAD_CHECK_TOL
        )))
    }
}
