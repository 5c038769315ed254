use crate::numcore::{Matrix, Rng};
use crate::{Error, Result};

/// Standard deviation of the initial `A` entries.
pub const LORA_INIT_STD: f64 = 0.01;

/// A frozen weight with a rank-`r` additive update:
/// `W_eff = W + (α / r) · B · A`, `W: d_out × d_in`, `A: r × d_in`, `B: d_out × r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLayer {
    pub base: Matrix,
    pub a: Matrix,
    pub b: Matrix,
    pub rank: usize,
    pub alpha: f64,
}

/// Wraps `w` with a zero-initialised `B` and small random `A`, so the layer
/// starts out identical to `w`.
pub fn lora_wrap(w: &Matrix, rank: usize, alpha: f64, rng: &mut Rng) -> Result<LoraLayer> {
    let (d_out, d_in) = w.shape();
    if rank == 0 || rank > d_in.min(d_out) {
        return Err(Error::Config(format!(
            "LoRA rank {rank} outside [1, {}] for a {d_out}×{d_in} weight",
            d_in.min(d_out)
        )));
    }
    let a = Matrix::from_vec(rank, d_in, (0..rank * d_in).map(|_| LORA_INIT_STD * rng.normal()).collect())?;
    Ok(LoraLayer {
        base: w.clone(),
        a,
        b: Matrix::zeros(d_out, rank),
        rank,
        alpha,
    })
}

impl LoraLayer {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// `(α / r) · B · A`.
    pub fn delta(&self) -> Matrix {
        self.b.matmul(&self.a).expect("lora shapes").scale(self.scaling())
    }

    pub fn effective_weight(&self) -> Matrix {
        self.base.add(&self.delta()).expect("lora shapes")
    }

    /// `W·x + (α / r)·B·(A·x)`.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let col = Matrix::from_vec(x.len(), 1, x.to_vec()).expect("input");
        let base = self.base.matmul(&col).expect("input width");
        let low = self.b.matmul(&self.a.matmul(&col).expect("input width")).expect("lora shapes");
        base.as_slice()
            .iter()
            .zip(low.as_slice())
            .map(|(w, d)| w + self.scaling() * d)
            .collect()
    }

    pub fn trainable_params(&self) -> usize {
        self.a.len() + self.b.len()
    }
}
