use serde::Serialize;

use super::config::FusionConfig;
use super::model::{FusionInput, FusionModel, InputDims, Mode};
use crate::dataset::TaskKind;
use crate::nn::{Grads, ParamId, Tape};
use crate::numcore::{Matrix, Rng};
use crate::{Error, Result};

/// Gradient-check tolerance on the relative error.
pub const GRAD_CHECK_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Number of parameter entries compared (all entries if fewer exist).
    pub samples: usize,
    pub seed: u64,
    /// Scales the largest checked analytic gradient by `1 + factor` before
    /// comparing; a sensitivity control for the check itself.
    pub corrupt: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            samples: 256,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Largest `|a − n| / max(1, |a|, |n|)` over checked entries.
    pub max_rel_error: f64,
    pub checked: usize,
    /// `name[index]` of the worst entry.
    pub worst: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRAD_CHECK_TOL
    }
}

fn batch_loss(model: &FusionModel, batch: &[FusionInput], alpha: &[f64]) -> Result<(f64, Grads)> {
    let mut total = Grads::zeros_like(&model.params);
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for x in batch {
        let mut tape = Tape::new(&model.params);
        let f = model.forward(&mut tape, x, &mut Mode::Eval)?;
        let l = tape.focal_loss(f.logits, &x.target, model.config.focal_gamma, alpha);
        loss += tape.value(l)[(0, 0)] * scale;
        total.add_scaled(&tape.backward(l, 1.0), scale);
    }
    Ok((loss, total))
}

/// Compares analytic gradients of the mean focal loss over `batch` with
/// central differences. Runs in evaluation mode, so dropout is off.
pub fn grad_check(model: &FusionModel, batch: &[FusionInput], alpha: &[f64], opts: GradCheckOptions) -> Result<GradCheckReport> {
    if batch.is_empty() {
        return Err(Error::Config("gradient check needs a non-empty batch".into()));
    }
    let (_, analytic) = batch_loss(model, batch, alpha)?;
    let mut entries: Vec<(ParamId, usize)> = model
        .params
        .ids()
        .flat_map(|id| (0..model.params.get(id).len()).map(move |k| (id, k)))
        .collect();
    let mut rng = Rng::new(opts.seed);
    rng.shuffle(&mut entries);
    entries.truncate(opts.samples);

    let grad_of = |id: ParamId, k: usize| analytic.get(id).map_or(0.0, |g| g.as_slice()[k]);
    let corrupted = opts.corrupt.map(|factor| {
        let pos = (0..entries.len())
            .max_by(|&a, &b| {
                let (ga, gb) = (grad_of(entries[a].0, entries[a].1), grad_of(entries[b].0, entries[b].1));
                ga.abs().total_cmp(&gb.abs())
            })
            .unwrap_or(0);
        (pos, factor)
    });

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: entries.len(),
        worst: String::new(),
    };
    for (pos, &(id, k)) in entries.iter().enumerate() {
        let orig = probe.params.get(id).as_slice()[k];
        probe.params.get_mut(id).as_mut_slice()[k] = orig + opts.eps;
        let (plus, _) = batch_loss(&probe, batch, alpha)?;
        probe.params.get_mut(id).as_mut_slice()[k] = orig - opts.eps;
        let (minus, _) = batch_loss(&probe, batch, alpha)?;
        probe.params.get_mut(id).as_mut_slice()[k] = orig;
        let numeric = (plus - minus) / (2.0 * opts.eps);
        let mut a = grad_of(id, k);
        if let Some((p, factor)) = corrupted {
            if p == pos {
                a *= 1.0 + factor;
            }
        }
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = format!("{}[{k}]", probe.params.entry(id).name);
        }
    }
    Ok(report)
}

/// The tiny model and two-sample batch (T = 3 and T = 2) used by the gradient check.
pub fn tiny_problem(seed: u64) -> Result<(FusionModel, Vec<FusionInput>, Vec<f64>)> {
    let mut rng = Rng::new(seed);
    let dims = InputDims {
        audio: 6,
        visual: 5,
        text: 4,
    };
    let config = FusionConfig {
        seed,
        ..FusionConfig::tiny()
    };
    let model = FusionModel::new(&config, dims, 3, TaskKind::Ternary, &mut rng)?;
    let mut m = |r: usize, c: usize| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap();
    let batch = vec![
        FusionInput {
            audio: m(3, 6),
            visual: m(3, 5),
            text: m(1, 4),
            target: vec![0.0, 1.0, 0.0],
        },
        FusionInput {
            audio: m(2, 6),
            visual: m(3, 5),
            text: m(1, 4),
            // a mixed target exercises every class term
            target: vec![0.3, 0.0, 0.7],
        },
    ];
    Ok((model, batch, vec![1.0, 2.0, 0.5]))
}
