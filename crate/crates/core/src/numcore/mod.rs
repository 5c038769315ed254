//! Dense matrices, a symmetric eigensolver, and a seeded generator.

mod eig;
mod matrix;
mod rng;

pub use eig::{sym_eig, SymEigen, MAX_SWEEPS, OFF_DIAGONAL_TOL};
pub use matrix::{dot, Matrix};
pub use rng::Rng;

/// Numerically stable softmax of `logits`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
