use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{ToyLlm, GROUP_BACKBONE, GROUP_HEAD, GROUP_LORA, GROUP_PROJECTOR};
use super::prompt::decode_answer;
use crate::dataset::{Dataset, Sample};
use crate::eval::{compute_metrics, Metrics};
use crate::nn::{clip_global_norm, AdamW, AdamWConfig, Grads, Tape};
use crate::numcore::{argmax, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    /// Mean answer-token cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
    /// Checksums of the groups the stage must not touch, before and after.
    pub frozen_before: Vec<(String, String)>,
    pub frozen_after: Vec<(String, String)>,
}

impl StageReport {
    pub fn frozen_intact(&self) -> bool {
        self.frozen_before == self.frozen_after
    }
}

fn answer_loss(model: &ToyLlm, sample: &Sample) -> Result<(f64, Grads)> {
    let label = sample.label(model.task.name)?;
    let mut target = vec![0.0; model.vocab.len()];
    target[model.option_ids()[label]] = 1.0;
    let alpha = vec![1.0; target.len()];
    let mut tape = Tape::new(&model.params);
    let logits = model.answer_logits(&mut tape, sample)?;
    let loss = tape.focal_loss(logits, &target, 0.0, &alpha);
    Ok((tape.value(loss)[(0, 0)], tape.backward(loss, 1.0)))
}

/// Trains the groups named in `rates` for `epochs` epochs; every other group
/// is frozen. `stage` tags the report and seeds the batch order.
pub fn train_groups(model: &mut ToyLlm, data: &Dataset, rates: &[(&str, f64)], epochs: usize, stage: u8) -> Result<StageReport> {
    if data.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let trainable: usize = rates.iter().map(|(g, _)| model.params.scalar_count(Some(g))).sum();
    if trainable == 0 {
        return Err(Error::Config(format!(
            "stage {stage} has no trainable parameters in groups {:?}",
            rates.iter().map(|(g, _)| *g).collect::<Vec<_>>()
        )));
    }
    let frozen: Vec<String> = [GROUP_PROJECTOR, GROUP_BACKBONE, GROUP_HEAD, GROUP_LORA]
        .iter()
        .filter(|g| !rates.iter().any(|(r, _)| r == *g))
        .map(|g| g.to_string())
        .collect();
    let sums = |m: &ToyLlm| -> Vec<(String, String)> {
        frozen.iter().map(|g| (g.clone(), m.params.checksum(Some(g)))).collect()
    };
    let frozen_before = sums(model);

    let lr_for = |group: &str| rates.iter().find(|(g, _)| *g == group).map(|(_, lr)| *lr);
    let mut opt = AdamW::new(&model.params, AdamWConfig::default());
    let mut order_rng = Rng::new(model.config.seed).substream(&format!("llm_toy.stage{stage}"));
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order_rng.shuffle(&mut order);
        let mut total = 0.0;
        for (step, batch) in order.chunks(model.config.batch_size).enumerate() {
            let results: Vec<(f64, Grads)> = batch
                .par_iter()
                .map(|&i| answer_loss(model, &data.samples[i]))
                .collect::<Result<_>>()?;
            let mut grads = Grads::zeros_like(&model.params);
            for (l, g) in &results {
                total += l;
                grads.add_scaled(g, 1.0 / batch.len() as f64);
            }
            if !total.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            let params = &model.params;
            clip_global_norm(&mut grads, model.config.clip_norm, |id| lr_for(&params.entry(id).group).is_some());
            opt.step(&mut model.params, &grads, lr_for);
        }
        epoch_losses.push(total / data.len() as f64);
        log::debug!("llm_toy stage {stage} epoch {epoch}: loss {:.5}", total / data.len() as f64);
    }
    Ok(StageReport {
        stage,
        epoch_losses,
        frozen_after: sums(model),
        frozen_before,
    })
}

/// Stage 1: projectors and answer head learn, the decoder stays frozen.
pub fn stage1_train(model: &mut ToyLlm, data: &Dataset) -> Result<StageReport> {
    let lr = model.config.stage1_lr;
    let epochs = model.config.stage1_epochs;
    train_groups(model, data, &[(GROUP_PROJECTOR, lr), (GROUP_HEAD, lr)], epochs, 1)
}

/// Stage 2: LoRA adapters and projectors learn at their own rates; base
/// weights and head stay frozen. Adapters must already be injected.
pub fn stage2_train(model: &mut ToyLlm, data: &Dataset) -> Result<StageReport> {
    if !model.lora_injected() {
        return Err(Error::Config("stage 2 requires injected LoRA adapters".into()));
    }
    let c = model.config.clone();
    train_groups(
        model,
        data,
        &[(GROUP_LORA, c.stage2_lr_lora), (GROUP_PROJECTOR, c.stage2_lr_proj)],
        c.stage2_epochs,
        2,
    )
}

/// Untrained, stage 1 only, or both stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stages {
    None,
    One,
    Both,
}

/// Builds a model for `train`'s shapes and runs the requested stages. The
/// returned model is rounded to checkpoint precision.
pub fn fit(train: &Dataset, task: crate::dataset::TaskKind, config: &super::LlmToyConfig, stages: Stages) -> Result<(ToyLlm, Vec<StageReport>)> {
    train.task(task)?;
    let (audio, visual, text) = train.dims();
    let dims = crate::fusenet::InputDims { audio, visual, text };
    let root = Rng::new(config.seed);
    let mut model = ToyLlm::new(config, dims, task, &mut root.substream("llm_toy.init"))?;
    let mut reports = Vec::new();
    if stages != Stages::None {
        reports.push(stage1_train(&mut model, train)?);
    }
    if stages == Stages::Both {
        model.inject_lora(&mut root.substream("llm_toy.lora"))?;
        reports.push(stage2_train(&mut model, train)?);
    }
    model.quantize();
    Ok((model, reports))
}

/// One scored prompt, as written to the JSON-lines log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub prompt: String,
    pub generation: String,
    pub option_probs: Vec<f64>,
    /// Class from the option probabilities.
    pub predicted: usize,
    /// Class parsed from the generation, if any option occurred in it.
    pub parsed: Option<usize>,
    pub label: usize,
}

pub struct LlmEvaluation {
    pub records: Vec<PromptRecord>,
    /// Scores of the option-probability readout; `unparsed` counts
    /// generations with no recognisable option.
    pub metrics: Metrics,
    /// Scores of the generated text mapped through the answer decoder, with
    /// unparsed generations assigned `fallback`.
    pub generation_metrics: Metrics,
}

/// Scores `data`; `fallback` is the class used for unparsable generations
/// (the majority training class).
pub fn evaluate(model: &ToyLlm, data: &Dataset, fallback: usize) -> Result<LlmEvaluation> {
    let prompt = model.template.render();
    let records: Vec<PromptRecord> = data
        .samples
        .par_iter()
        .map(|s| {
            let probs = model.option_probs(s)?;
            let generation = model.generate(s)?;
            Ok(PromptRecord {
                id: s.id.clone(),
                prompt: prompt.clone(),
                parsed: decode_answer(&generation, &model.template.options),
                generation,
                predicted: argmax(&probs),
                option_probs: probs,
                label: s.label(model.task.name)?,
            })
        })
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let unparsed = records.iter().filter(|r| r.parsed.is_none()).count();
    let preds: Vec<usize> = records.iter().map(|r| r.predicted).collect();
    let mut metrics = compute_metrics(&preds, &labels, model.task.classes)?;
    metrics.unparsed = unparsed;
    let gen: Vec<usize> = records.iter().map(|r| r.parsed.unwrap_or(fallback)).collect();
    let mut generation_metrics = compute_metrics(&gen, &labels, model.task.classes)?;
    generation_metrics.unparsed = unparsed;
    Ok(LlmEvaluation {
        records,
        metrics,
        generation_metrics,
    })
}

pub fn write_jsonl(path: &Path, records: &[PromptRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Most frequent label in `labels` (lowest class on a tie).
pub fn majority_class(labels: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&y| counts[y] += 1);
    let max = counts.iter().copied().max().unwrap_or(0);
    counts.iter().position(|&c| c == max).unwrap_or(0)
}
