//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records one forward pass. Parameters are read from a borrowed
//! [`ParamSet`] without copying, and [`Tape::backward`] returns gradients for
//! every parameter the pass touched. Shapes are the caller's responsibility:
//! recording an op on mismatched shapes panics.

use super::params::{ParamId, ParamSet};
use crate::numcore::{dot, softmax, Matrix};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Clamp applied to probabilities inside logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    /// Per-row normalisation without affine terms; keeps 1/σ per row.
    LayerNorm(Var, Vec<f64>),
    Softmax(Var),
    Transpose(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Focal {
        logits: Var,
        target: Vec<f64>,
        gamma: f64,
        alpha: Vec<f64>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Option<Matrix>,
    op: Op,
    needs_grad: bool,
}

/// Gradients indexed by parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    slots: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Grads {
            slots: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.slots[id.index()].as_ref()
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Matrix> {
        self.slots[id.index()].as_mut()
    }

    fn accumulate(&mut self, id: ParamId, g: Matrix) {
        match &mut self.slots[id.index()] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Grads, factor: f64) {
        for (mine, theirs) in self.slots.iter_mut().zip(&other.slots) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => m.axpy(factor, t),
                    None => *mine = Some(t.scale(factor)),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Euclidean norm over the gradients accepted by `include`.
    pub fn global_norm(&self, include: impl Fn(ParamId) -> bool) -> f64 {
        self.slots
            .iter()
            .enumerate()
            .filter(|(i, _)| include(ParamId(*i)))
            .filter_map(|(_, g)| g.as_ref())
            .map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(Matrix::is_finite)
    }
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Const, false)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b)).expect("matmul shape");
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a, b), g)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b)).expect("matmul_t shape");
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMulT(a, b), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b)).expect("add shape");
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), g)
    }

    /// Adds the 1×n row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(bm.shape(), (1, am.cols()), "add_row shape");
        let mut v = am.clone();
        for i in 0..v.rows() {
            for (x, y) in v.row_mut(i).iter_mut().zip(bm.as_slice()) {
                *x += y;
            }
        }
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::AddRow(a, b), g)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(am.shape(), bm.shape(), "mul shape");
        let data = am.as_slice().iter().zip(bm.as_slice()).map(|(x, y)| x * y).collect();
        let v = Matrix::from_vec(am.rows(), am.cols(), data).unwrap();
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul(a, b), g)
    }

    /// Multiplies every row of `a` elementwise by the 1×n row `b`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Var {
        let (am, bm) = (self.value(a), self.value(b));
        assert_eq!(bm.shape(), (1, am.cols()), "mul_row shape");
        let mut v = am.clone();
        for i in 0..v.rows() {
            for (x, y) in v.row_mut(i).iter_mut().zip(bm.as_slice()) {
                *x *= y;
            }
        }
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::MulRow(a, b), g)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).scale(factor);
        let g = self.needs(a);
        self.push(v, Op::Scale(a, factor), g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let g = self.needs(a);
        self.push(v, Op::Relu(a), g)
    }

    /// Normalises each row to zero mean and unit variance, `(x − μ) / √(σ² + eps)`.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let am = self.value(a);
        let mut v = am.clone();
        let mut inv_std = Vec::with_capacity(am.rows());
        let n = am.cols() as f64;
        for i in 0..v.rows() {
            let row = v.row_mut(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
            inv_std.push(inv);
        }
        let g = self.needs(a);
        self.push(v, Op::LayerNorm(a, inv_std), g)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let mut v = Matrix::zeros(am.rows(), am.cols());
        for i in 0..am.rows() {
            v.row_mut(i).copy_from_slice(&softmax(am.row(i)));
        }
        let g = self.needs(a);
        self.push(v, Op::Softmax(a), g)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        let g = self.needs(a);
        self.push(v, Op::Transpose(a), g)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice_cols(start, len);
        let g = self.needs(a);
        self.push(v, Op::SliceCols(a, start), g)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::hcat(&mats).expect("concat_cols shape");
        let g = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::vcat(&mats).expect("concat_rows shape");
        let g = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::ConcatRows(parts.to_vec()), g)
    }

    /// Rows of `a` picked by index (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let v = self.value(a).select_rows(indices);
        let g = self.needs(a);
        self.push(v, Op::GatherRows(a, indices.to_vec()), g)
    }

    /// Focal loss of a 1×C logit row against a (possibly soft) target
    /// distribution: `Σ_c target_c · α_c · (1 − p_c)^γ · (−ln p_c)`.
    pub fn focal_loss(&mut self, logits: Var, target: &[f64], gamma: f64, alpha: &[f64]) -> Var {
        let z = self.value(logits);
        assert_eq!(z.shape(), (1, target.len()), "focal logits shape");
        assert_eq!(alpha.len(), target.len(), "focal alpha length");
        let probs = softmax(z.as_slice());
        let loss = focal_value(&probs, target, gamma, alpha);
        let g = self.needs(logits);
        self.push(
            Matrix::filled(1, 1, loss),
            Op::Focal {
                logits,
                target: target.to_vec(),
                gamma,
                alpha: alpha.to_vec(),
                probs,
            },
            g,
        )
    }

    /// Back-propagates from `out` (any shape; seeded with `seed` everywhere)
    /// and returns parameter gradients.
    pub fn backward(&self, out: Var, seed: f64) -> Grads {
        let mut grads = Grads::zeros_like(self.params);
        let mut adj: Vec<Option<Matrix>> = Vec::with_capacity(self.nodes.len());
        adj.resize_with(self.nodes.len(), || None);
        let shape = self.value(out).shape();
        adj[out.0] = Some(Matrix::filled(shape.0, shape.1, seed));

        for i in (0..=out.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let send = |v: Var, m: Matrix, adj: &mut Vec<Option<Matrix>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut adj[v.0] {
                    Some(existing) => existing.add_assign(&m),
                    slot @ None => *slot = Some(m),
                }
            };
            match &node.op {
                Op::Const => {}
                Op::Param(id) => grads.accumulate(*id, g),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        send(*a, g.matmul_t(self.value(*b)).unwrap(), &mut adj);
                    }
                    if self.needs(*b) {
                        send(*b, self.value(*a).t_matmul(&g).unwrap(), &mut adj);
                    }
                }
                Op::MatMulT(a, b) => {
                    // C = A Bᵀ: dA = dC B, dB = dCᵀ A
                    if self.needs(*a) {
                        send(*a, g.matmul(self.value(*b)).unwrap(), &mut adj);
                    }
                    if self.needs(*b) {
                        send(*b, g.t_matmul(self.value(*a)).unwrap(), &mut adj);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        send(*b, g.clone(), &mut adj);
                    }
                    send(*a, g, &mut adj);
                }
                Op::AddRow(a, b) => {
                    if self.needs(*b) {
                        let mut col_sum = vec![0.0; g.cols()];
                        for row in g.iter_rows() {
                            col_sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                        }
                        send(*b, Matrix::row_vector(&col_sum), &mut adj);
                    }
                    send(*a, g, &mut adj);
                }
                Op::Mul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let d = g.as_slice().iter().zip(bm.as_slice()).map(|(x, y)| x * y).collect();
                        send(*a, Matrix::from_vec(g.rows(), g.cols(), d).unwrap(), &mut adj);
                    }
                    if self.needs(*b) {
                        let d = g.as_slice().iter().zip(am.as_slice()).map(|(x, y)| x * y).collect();
                        send(*b, Matrix::from_vec(g.rows(), g.cols(), d).unwrap(), &mut adj);
                    }
                }
                Op::MulRow(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    if self.needs(*b) {
                        let mut acc = vec![0.0; g.cols()];
                        for r in 0..g.rows() {
                            for ((s, gv), av) in acc.iter_mut().zip(g.row(r)).zip(am.row(r)) {
                                *s += gv * av;
                            }
                        }
                        send(*b, Matrix::row_vector(&acc), &mut adj);
                    }
                    if self.needs(*a) {
                        let mut d = g;
                        for r in 0..d.rows() {
                            d.row_mut(r).iter_mut().zip(bm.as_slice()).for_each(|(x, y)| *x *= y);
                        }
                        send(*a, d, &mut adj);
                    }
                }
                Op::Scale(a, f) => send(*a, g.scale(*f), &mut adj),
                Op::Relu(a) => {
                    let am = self.value(*a);
                    let d = g
                        .as_slice()
                        .iter()
                        .zip(am.as_slice())
                        .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    send(*a, Matrix::from_vec(g.rows(), g.cols(), d).unwrap(), &mut adj);
                }
                Op::LayerNorm(a, inv_std) => {
                    let y = node.value.as_ref().unwrap();
                    let n = y.cols() as f64;
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = dot(gr, yr) / n;
                        for (j, o) in d.row_mut(r).iter_mut().enumerate() {
                            *o = inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                    send(*a, d, &mut adj);
                }
                Op::Softmax(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut d = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        let s = dot(gr, yr);
                        for (j, o) in d.row_mut(r).iter_mut().enumerate() {
                            *o = yr[j] * (gr[j] - s);
                        }
                    }
                    send(*a, d, &mut adj);
                }
                Op::Transpose(a) => send(*a, g.transpose(), &mut adj),
                Op::SliceCols(a, start) => {
                    let am = self.value(*a);
                    let mut d = Matrix::zeros(am.rows(), am.cols());
                    for r in 0..g.rows() {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    send(*a, d, &mut adj);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.needs(p) {
                            send(p, g.slice_cols(start, w), &mut adj);
                        }
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        if self.needs(p) {
                            send(p, g.slice_rows(start, h), &mut adj);
                        }
                        start += h;
                    }
                }
                Op::GatherRows(a, indices) => {
                    let am = self.value(*a);
                    let mut d = Matrix::zeros(am.rows(), am.cols());
                    for (r, &src) in indices.iter().enumerate() {
                        d.row_mut(src).iter_mut().zip(g.row(r)).for_each(|(o, v)| *o += v);
                    }
                    send(*a, d, &mut adj);
                }
                Op::Focal {
                    logits,
                    target,
                    gamma,
                    alpha,
                    probs,
                } => {
                    let dz = focal_grad(probs, target, *gamma, alpha);
                    let scale = g[(0, 0)];
                    let d: Vec<f64> = dz.iter().map(|v| v * scale).collect();
                    send(*logits, Matrix::row_vector(&d), &mut adj);
                }
            }
        }
        grads
    }
}

/// Focal loss value for probabilities `p` (see [`Tape::focal_loss`]).
pub fn focal_value(p: &[f64], target: &[f64], gamma: f64, alpha: &[f64]) -> f64 {
    p.iter()
        .zip(target)
        .zip(alpha)
        .filter(|((_, t), _)| **t != 0.0)
        .map(|((&pc, &t), &a)| {
            let modulator = if gamma == 0.0 { 1.0 } else { (1.0 - pc).max(0.0).powf(gamma) };
            -t * a * modulator * pc.max(LOG_CLAMP).ln()
        })
        .sum()
}

/// Gradient of [`focal_value`] with respect to the logits.
fn focal_grad(p: &[f64], target: &[f64], gamma: f64, alpha: &[f64]) -> Vec<f64> {
    // dL/dp_c, then through the softmax Jacobian
    let dp: Vec<f64> = p
        .iter()
        .zip(target)
        .zip(alpha)
        .map(|((&pc, &t), &a)| {
            if t == 0.0 {
                return 0.0;
            }
            let q = (1.0 - pc).max(0.0);
            let log_p = pc.max(LOG_CLAMP).ln();
            let dlog = if pc > LOG_CLAMP { 1.0 / pc } else { 0.0 };
            let (modulator, dmod) = if gamma == 0.0 {
                (1.0, 0.0)
            } else if q == 0.0 {
                (0.0, if gamma == 1.0 { -1.0 } else { 0.0 })
            } else {
                (q.powf(gamma), -gamma * q.powf(gamma - 1.0))
            };
            -t * a * (dmod * log_p + modulator * dlog)
        })
        .collect();
    let s: f64 = dp.iter().zip(p).map(|(d, pc)| d * pc).sum();
    p.iter().zip(&dp).map(|(pc, d)| pc * (d - s)).collect()
}
