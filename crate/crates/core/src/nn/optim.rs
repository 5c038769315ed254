//! AdamW with decoupled weight decay and per-group learning rates.

use super::params::{ParamId, ParamSet};
use super::tape::Grads;
use crate::numcore::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Option<Matrix>>,
    second: Vec<Option<Matrix>>,
    steps: Vec<u64>,
}

impl AdamW {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Self {
        AdamW {
            config,
            first: vec![None; params.len()],
            second: vec![None; params.len()],
            steps: vec![0; params.len()],
        }
    }

    /// One update. `lr_for` maps a parameter group to its learning rate;
    /// `None` freezes the group, leaving both values and moments untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads, lr_for: impl Fn(&str) -> Option<f64>) {
        let c = self.config;
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            let Some(lr) = lr_for(&params.entry(id).group) else { continue };
            let Some(g) = grads.get(id) else { continue };
            let i = id.index();
            let m = self.first[i].get_or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let v = self.second[i].get_or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let bc1 = 1.0 - c.beta1.powi(t);
            let bc2 = 1.0 - c.beta2.powi(t);
            let w = params.get_mut(id).as_mut_slice();
            let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
            for k in 0..w.len() {
                let gk = g.as_slice()[k];
                ms[k] = c.beta1 * ms[k] + (1.0 - c.beta1) * gk;
                vs[k] = c.beta2 * vs[k] + (1.0 - c.beta2) * gk * gk;
                let m_hat = ms[k] / bc1;
                let v_hat = vs[k] / bc2;
                w[k] -= lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * w[k]);
            }
        }
    }
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64, include: impl Fn(ParamId) -> bool) -> f64 {
    let norm = grads.global_norm(include);
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Linear warmup from `base / warmup_steps` to `base`, constant afterwards.
pub fn warmup_lr(base: f64, step: usize, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 || step >= warmup_steps {
        base
    } else {
        base * (step + 1) as f64 / warmup_steps as f64
    }
}
