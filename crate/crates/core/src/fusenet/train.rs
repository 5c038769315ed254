use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::FusionConfig;
use super::model::{FusionInput, FusionModel, InputDims, Mode};
use crate::dataset::{Dataset, TaskKind};
use crate::eval::{compute_metrics, Metrics};
use crate::nn::{clip_global_norm, focal_value, AdamW, AdamWConfig, Grads, ParamSet, Tape};
use crate::numcore::{argmax, Matrix, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_wf1: f64,
    pub dev_uf1: f64,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.epochs {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// Focal weights `α_c ∝ 1 / n_c`, scaled to mean 1 over the classes present.
/// Absent classes get weight 1.
pub fn inverse_frequency_alpha(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    labels.iter().for_each(|&y| counts[y] += 1);
    let inv: Vec<f64> = counts.iter().map(|&n| if n == 0 { 0.0 } else { 1.0 / n as f64 }).collect();
    let present = counts.iter().filter(|&&n| n > 0).count().max(1);
    let mean = inv.iter().sum::<f64>() / present as f64;
    inv.iter().map(|&v| if v == 0.0 { 1.0 } else { v / mean }).collect()
}

fn interpolate(a: &Matrix, b: &Matrix, lambda: f64) -> Matrix {
    // A member with zero weight contributes no frames.
    let rows = match (lambda > 0.0, lambda < 1.0) {
        (true, true) => a.rows().max(b.rows()),
        (true, false) => a.rows(),
        (false, _) => b.rows(),
    };
    let mut out = Matrix::zeros(rows, a.cols());
    for t in 0..rows {
        let ra = (t < a.rows()).then(|| a.row(t));
        let rb = (t < b.rows()).then(|| b.row(t));
        for (j, o) in out.row_mut(t).iter_mut().enumerate() {
            let xa = ra.map_or(0.0, |r| r[j]);
            let xb = rb.map_or(0.0, |r| r[j]);
            *o = lambda * xa + (1.0 - lambda) * xb;
        }
    }
    out
}

/// `λ·a + (1 − λ)·b` for every modality and the target. Sequences of unequal
/// length are zero-padded to the longer one.
pub fn mix_with(a: &FusionInput, b: &FusionInput, lambda: f64) -> FusionInput {
    FusionInput {
        audio: interpolate(&a.audio, &b.audio, lambda),
        visual: interpolate(&a.visual, &b.visual, lambda),
        text: interpolate(&a.text, &b.text, lambda),
        target: a
            .target
            .iter()
            .zip(&b.target)
            .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
            .collect(),
    }
}

/// With probability `prob` mixes `a` with `b` at `λ ~ Beta(beta, beta)`;
/// otherwise returns `a` unchanged.
pub fn mixup(a: &FusionInput, b: &FusionInput, rng: &mut Rng, prob: f64, beta: f64) -> Result<FusionInput> {
    if prob > 0.0 && rng.bernoulli(prob) {
        let lambda = rng.beta(beta, beta)?;
        Ok(mix_with(a, b, lambda))
    } else {
        Ok(a.clone())
    }
}

fn inputs(ds: &Dataset, task: TaskKind, classes: usize) -> Result<Vec<FusionInput>> {
    ds.samples
        .iter()
        .map(|s| Ok(FusionInput::from_sample(s, s.label(task)?, classes)))
        .collect()
}

/// Loss and gradients for one example.
fn example_grads(model: &FusionModel, x: &FusionInput, alpha: &[f64], mut mode: Mode) -> Result<(f64, Grads)> {
    let mut tape = Tape::new(&model.params);
    let f = model.forward(&mut tape, x, &mut mode)?;
    let loss = tape.focal_loss(f.logits, &x.target, model.config.focal_gamma, alpha);
    let value = tape.value(loss)[(0, 0)];
    Ok((value, tape.backward(loss, 1.0)))
}

/// Evaluation-mode probabilities for every input, computed in parallel.
pub fn predict_all(model: &FusionModel, xs: &[FusionInput]) -> Result<Vec<Vec<f64>>> {
    xs.par_iter().map(|x| model.predict_proba(x)).collect()
}

/// Predicted classes for every sample of `ds`.
pub fn predict_dataset(model: &FusionModel, ds: &Dataset) -> Result<Vec<usize>> {
    let classes = model.classes;
    let xs: Vec<FusionInput> = ds
        .samples
        .iter()
        .map(|s| FusionInput::from_sample(s, 0, classes))
        .collect();
    Ok(predict_all(model, &xs)?.iter().map(|p| argmax(p)).collect())
}

struct DevScore {
    loss: f64,
    metrics: Metrics,
}

fn score(model: &FusionModel, xs: &[FusionInput], labels: &[usize], alpha: &[f64]) -> Result<DevScore> {
    let probs = predict_all(model, xs)?;
    let loss = probs
        .iter()
        .zip(xs)
        .map(|(p, x)| focal_value(p, &x.target, model.config.focal_gamma, alpha))
        .sum::<f64>()
        / xs.len() as f64;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    Ok(DevScore {
        loss,
        metrics: compute_metrics(&preds, labels, model.classes)?,
    })
}

/// Trains a fusion model; the kept parameters are those of the epoch with
/// the best dev weighted F1, rounded to checkpoint precision.
pub fn train(train_ds: &Dataset, dev_ds: &Dataset, task: TaskKind, config: &FusionConfig) -> Result<(FusionModel, TrainHistory)> {
    config.validate()?;
    if train_ds.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let classes = train_ds.task(task)?.classes;
    let (audio, visual, text) = train_ds.dims();
    let dims = InputDims { audio, visual, text };
    let root = Rng::new(config.seed);
    let mut model = FusionModel::new(config, dims, classes, task, &mut root.substream("fusenet.init"))?;

    let train_labels = train_ds.labels(task)?;
    let alpha = match &config.focal_alpha {
        Some(a) if a.len() != classes => {
            return Err(Error::Config(format!("focal_alpha has {} entries for {classes} classes", a.len())))
        }
        Some(a) => a.clone(),
        None => inverse_frequency_alpha(&train_labels, classes),
    };
    let train_x = inputs(train_ds, task, classes)?;
    let dev_x = inputs(dev_ds, task, classes)?;
    let dev_labels = dev_ds.labels(task)?;

    let mut order_rng = root.substream("fusenet.order");
    let mut mix_rng = root.substream("fusenet.mixup");
    let dropout_root = root.substream("fusenet.dropout");
    let mut opt = AdamW::new(
        &model.params,
        AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let steps_per_epoch = train_x.len().div_ceil(config.batch_size);
    let warmup_steps = config.warmup_epochs * steps_per_epoch;

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ParamSet)> = None;
    let mut since_best = 0;
    let mut step = 0usize;
    let mut example = 0u64;
    for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train_x.len()).collect();
        order_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let mut jobs = Vec::with_capacity(batch.len());
            for &i in batch {
                let partner = &train_x[mix_rng.below(train_x.len())];
                let x = mixup(&train_x[i], partner, &mut mix_rng, config.mixup_prob, config.mixup_beta)?;
                jobs.push((x, dropout_root.fork(example)));
                example += 1;
            }
            let results: Vec<(f64, Grads)> = jobs
                .into_par_iter()
                .map(|(x, mut rng)| example_grads(&model, &x, &alpha, Mode::Train(&mut rng)))
                .collect::<Result<_>>()?;
            let mut grads = Grads::zeros_like(&model.params);
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                grads.add_scaled(g, 1.0 / batch.len() as f64);
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence { epoch, step: batch_no });
            }
            loss_sum += batch_loss * batch.len() as f64;
            clip_global_norm(&mut grads, config.clip_norm, |_| true);
            lr = crate::nn::warmup_lr(config.lr, step, warmup_steps);
            opt.step(&mut model.params, &grads, |_| Some(lr));
            step += 1;
        }

        let (dev_loss, wf1, uf1) = if dev_x.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let s = score(&model, &dev_x, &dev_labels, &alpha)?;
            (s.loss, s.metrics.weighted_f1, s.metrics.unweighted_f1)
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_x.len() as f64,
            dev_loss,
            dev_wf1: wf1,
            dev_uf1: uf1,
            lr,
        });
        log::debug!("fusenet epoch {epoch}: train {:.5} dev W_F1 {wf1:.4}", loss_sum / train_x.len() as f64);

        // Without a dev set the last epoch is kept.
        let improved = dev_x.is_empty() || best.as_ref().is_none_or(|(b, _)| wf1 > *b);
        if improved {
            best = Some((if dev_x.is_empty() { f64::NEG_INFINITY } else { wf1 }, model.params.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    model.quantize();
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(audio: &[f64], label: usize) -> FusionInput {
        let mut target = vec![0.0; 2];
        target[label] = 1.0;
        FusionInput {
            audio: Matrix::from_vec(audio.len() / 2, 2, audio.to_vec()).unwrap(),
            visual: Matrix::row_vector(&[1.0]),
            text: Matrix::row_vector(&[1.0, 3.0]),
            target,
        }
    }

    #[test]
    fn mix_arithmetic() {
        let mut a = input(&[1.0, 3.0], 0);
        let mut b = input(&[3.0, 1.0], 1);
        a.text = Matrix::row_vector(&[1.0, 3.0]);
        b.text = Matrix::row_vector(&[3.0, 1.0]);
        let m = mix_with(&a, &b, 0.7);
        assert!((m.text[(0, 0)] - 1.6).abs() < 1e-12 && (m.text[(0, 1)] - 2.4).abs() < 1e-12);
        let half = mix_with(&a, &b, 0.5);
        assert_eq!(half.target, vec![0.5, 0.5]);
    }

    #[test]
    fn lambda_one_is_the_first_sample() {
        let a = input(&[1.0, -2.0], 0);
        let b = input(&[3.0, 1.0, 7.0, 7.0], 1);
        assert_eq!(mix_with(&a, &b, 1.0), a);
        let m = mix_with(&a, &b, 0.25);
        assert_eq!(m.audio.rows(), 2);
        assert_eq!(m.audio.row(1), &[0.75 * 7.0, 0.75 * 7.0]);
    }

    #[test]
    fn mixup_probability_zero_is_identity() {
        let a = input(&[1.0, 2.0], 0);
        let b = input(&[3.0, 4.0], 1);
        let mut rng = Rng::new(0);
        assert_eq!(mixup(&a, &b, &mut rng, 0.0, 0.2).unwrap(), a);
        let mut changed = 0;
        for _ in 0..50 {
            let m = mixup(&a, &b, &mut rng, 1.0, 0.2).unwrap();
            assert!((m.target.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            changed += (m != a) as usize;
        }
        assert!(changed > 40);
    }

    #[test]
    fn inverse_frequency_weights() {
        let alpha = inverse_frequency_alpha(&[0, 0, 0, 1], 3);
        // 1/3 and 1 scaled to mean 1 over present classes
        assert!((alpha[0] - 0.5).abs() < 1e-12 && (alpha[1] - 1.5).abs() < 1e-12);
        assert_eq!(alpha[2], 1.0);
    }
}
