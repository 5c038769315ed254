use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{FusionConfig, Positional};
use crate::dataset::{mpf, Sample, TaskKind};
use crate::nn::{ParamId, ParamSet, Tape, Var};
use crate::numcore::{Matrix, Rng};
use crate::{Error, Result};

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-5;

pub const CONFIG_FILE: &str = "fusenet.json";
pub const PARAMS_DIR: &str = "params";

/// Input widths of the three modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub audio: usize,
    pub visual: usize,
    pub text: usize,
}

/// One sample as the network consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInput {
    /// `T_a × d_audio` frames.
    pub audio: Matrix,
    /// `T_v × d_visual` frames.
    pub visual: Matrix,
    /// `1 × d_text`.
    pub text: Matrix,
    /// Class distribution the loss is taken against (one-hot unless mixed).
    pub target: Vec<f64>,
}

impl FusionInput {
    pub fn from_sample(sample: &Sample, label: usize, classes: usize) -> Self {
        let mut target = vec![0.0; classes];
        target[label] = 1.0;
        FusionInput {
            audio: sample.audio.values.clone(),
            visual: sample.visual.values.clone(),
            text: Matrix::row_vector(&sample.text),
            target,
        }
    }
}

/// Training mode carries the dropout stream; evaluation mode has none.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut Rng),
}

impl Mode<'_> {
    fn dropout(&mut self, tape: &mut Tape, x: Var, p: f64) -> Var {
        match self {
            Mode::Train(rng) if p > 0.0 => {
                let (r, c) = tape.value(x).shape();
                let keep = 1.0 - p;
                let mask = (0..r * c)
                    .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let m = tape.constant(Matrix::from_vec(r, c, mask).unwrap());
                tape.mul(x, m)
            }
            _ => x,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct EncoderLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    norm1: Norm,
    ff1: Linear,
    ff2: Linear,
    norm2: Norm,
}

#[derive(Debug, Clone)]
struct Branch {
    proj: Linear,
    norm: Norm,
    pe: Option<ParamId>,
    layers: Vec<EncoderLayer>,
    pool: ParamId,
}

#[derive(Debug, Clone)]
struct Layout {
    audio: Branch,
    visual: Branch,
    text_proj: Linear,
    text_norm: Norm,
    hidden: Vec<(Linear, Norm)>,
    out: Linear,
}

/// Output of one forward pass.
pub struct Forward {
    pub logits: Var,
    /// Attention-pooling weights over audio frames.
    pub audio_alpha: Vec<f64>,
    pub visual_alpha: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: FusionConfig,
    pub dims: InputDims,
    pub classes: usize,
    pub task: TaskKind,
    pub params: ParamSet,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedHeader {
    config: FusionConfig,
    dims: InputDims,
    classes: usize,
    task: TaskKind,
}

fn linear(p: &mut ParamSet, name: &str, group: &str, rows: usize, cols: usize, rng: &mut Rng) -> Linear {
    Linear {
        w: p.add_xavier(format!("{name}.w"), group, rows, cols, rng),
        b: p.add(format!("{name}.b"), group, Matrix::zeros(1, cols)),
    }
}

fn norm(p: &mut ParamSet, name: &str, group: &str, d: usize) -> Norm {
    Norm {
        gain: p.add(format!("{name}.gain"), group, Matrix::filled(1, d, 1.0)),
        bias: p.add(format!("{name}.bias"), group, Matrix::zeros(1, d)),
    }
}

impl FusionModel {
    pub fn new(config: &FusionConfig, dims: InputDims, classes: usize, task: TaskKind, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
        }
        let d = config.d;
        let mut p = ParamSet::new();
        let branch = |p: &mut ParamSet, m: &str, d_in: usize, rng: &mut Rng| Branch {
            proj: linear(p, &format!("proj.{m}"), "projection", d_in, d, rng),
            norm: norm(p, &format!("proj.{m}.ln"), "projection", d),
            pe: (config.positional == Positional::Learned).then(|| {
                let data = (0..config.max_frames * d).map(|_| 0.02 * rng.normal()).collect();
                p.add(format!("pe.{m}"), "encoder", Matrix::from_vec(config.max_frames, d, data).unwrap())
            }),
            layers: (0..config.layers)
                .map(|l| {
                    let n = format!("enc.{m}.{l}");
                    EncoderLayer {
                        q: linear(p, &format!("{n}.q"), "encoder", d, d, rng),
                        k: linear(p, &format!("{n}.k"), "encoder", d, d, rng),
                        v: linear(p, &format!("{n}.v"), "encoder", d, d, rng),
                        o: linear(p, &format!("{n}.o"), "encoder", d, d, rng),
                        norm1: norm(p, &format!("{n}.ln1"), "encoder", d),
                        ff1: linear(p, &format!("{n}.ff1"), "encoder", d, 4 * d, rng),
                        ff2: linear(p, &format!("{n}.ff2"), "encoder", 4 * d, d, rng),
                        norm2: norm(p, &format!("{n}.ln2"), "encoder", d),
                    }
                })
                .collect(),
            pool: p.add_xavier(format!("pool.{m}"), "encoder", 1, d, rng),
        };
        let audio = branch(&mut p, "audio", dims.audio, rng);
        let visual = branch(&mut p, "visual", dims.visual, rng);
        let text_proj = linear(&mut p, "proj.text", "projection", dims.text, d, rng);
        let text_norm = norm(&mut p, "proj.text.ln", "projection", d);
        let mut width = 3 * d;
        let mut hidden = Vec::new();
        for (i, &h) in config.head_hidden.iter().enumerate() {
            hidden.push((
                linear(&mut p, &format!("head.{i}"), "head", width, h, rng),
                norm(&mut p, &format!("head.{i}.ln"), "head", h),
            ));
            width = h;
        }
        let out = linear(&mut p, "head.out", "head", width, classes, rng);
        Ok(FusionModel {
            config: config.clone(),
            dims,
            classes,
            task,
            params: p,
            layout: Layout {
                audio,
                visual,
                text_proj,
                text_norm,
                hidden,
                out,
            },
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count(None)
    }

    /// Records a forward pass on `tape` (which must borrow `self.params`).
    pub fn forward(&self, tape: &mut Tape, input: &FusionInput, mode: &mut Mode) -> Result<Forward> {
        self.check_input(input)?;
        let l = &self.layout;
        let (ha, audio_alpha) = self.branch(tape, &l.audio, &input.audio, mode);
        let (hv, visual_alpha) = self.branch(tape, &l.visual, &input.visual, mode);
        let xt = tape.constant(input.text.clone());
        let zt = project(tape, xt, l.text_proj.w, l.text_proj.b, Some((l.text_norm.gain, l.text_norm.bias)));
        let mut h = tape.concat_cols(&[ha, hv, zt]);
        for (lin, n) in &l.hidden {
            h = affine(tape, h, *lin);
            h = tape.relu(h);
            h = norm_affine(tape, h, *n);
            h = mode.dropout(tape, h, self.config.dropout);
        }
        let logits = affine(tape, h, l.out);
        Ok(Forward {
            logits,
            audio_alpha,
            visual_alpha,
        })
    }

    /// Class probabilities in evaluation mode.
    pub fn predict_proba(&self, input: &FusionInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, input, &mut Mode::Eval)?;
        Ok(crate::numcore::softmax(tape.value(f.logits).as_slice()))
    }

    fn check_input(&self, x: &FusionInput) -> Result<()> {
        let ok = x.audio.cols() == self.dims.audio
            && x.visual.cols() == self.dims.visual
            && x.text.shape() == (1, self.dims.text)
            && x.target.len() == self.classes;
        if !ok {
            return Err(Error::Dimension(format!(
                "input widths ({}, {}, {}) with {} targets; model expects {:?} with {} classes",
                x.audio.cols(),
                x.visual.cols(),
                x.text.cols(),
                x.target.len(),
                self.dims,
                self.classes
            )));
        }
        if x.audio.rows() == 0 || x.visual.rows() == 0 {
            return Err(Error::Dimension("sequences need at least one frame".into()));
        }
        if self.config.positional == Positional::Learned {
            let t = x.audio.rows().max(x.visual.rows());
            if t > self.config.max_frames {
                return Err(Error::Dimension(format!(
                    "{t} frames exceed the learned positional table of {}",
                    self.config.max_frames
                )));
            }
        }
        Ok(())
    }

    fn branch(&self, tape: &mut Tape, b: &Branch, frames: &Matrix, mode: &mut Mode) -> (Var, Vec<f64>) {
        let t = frames.rows();
        let x = tape.constant(frames.clone());
        let mut h = project(tape, x, b.proj.w, b.proj.b, Some((b.norm.gain, b.norm.bias)));
        match (self.config.positional, b.pe) {
            (Positional::Sinusoidal, _) => {
                let pe = tape.constant(positional_encoding(t, self.config.d));
                h = tape.add(h, pe);
            }
            (Positional::Learned, Some(id)) => {
                let table = tape.param(id);
                let rows: Vec<usize> = (0..t).collect();
                let pe = tape.gather_rows(table, &rows);
                h = tape.add(h, pe);
            }
            _ => {}
        }
        for layer in &b.layers {
            h = self.encoder_layer(tape, h, layer, mode);
        }
        let w = tape.param(b.pool);
        attention_pool_var(tape, h, w)
    }

    fn encoder_layer(&self, tape: &mut Tape, x: Var, l: &EncoderLayer, mode: &mut Mode) -> Var {
        let heads = self.config.heads;
        let dh = self.config.d / heads;
        let q = affine(tape, x, l.q);
        let k = affine(tape, x, l.k);
        let v = affine(tape, x, l.v);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let s = tape.matmul_t(qh, kh);
            let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
            let a = tape.softmax_rows(s);
            outs.push(tape.matmul(a, vh));
        }
        let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs) };
        let att = affine(tape, cat, l.o);
        let att = mode.dropout(tape, att, self.config.dropout);
        let r = tape.add(x, att);
        let x = norm_affine(tape, r, l.norm1);
        let f = affine(tape, x, l.ff1);
        let f = tape.relu(f);
        let f = affine(tape, f, l.ff2);
        let f = mode.dropout(tape, f, self.config.dropout);
        let r = tape.add(x, f);
        norm_affine(tape, r, l.norm2)
    }

    /// Writes `fusenet.json` and the parameter tensors under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = SavedHeader {
            config: self.config.clone(),
            dims: self.dims,
            classes: self.classes,
            task: self.task,
        };
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&header)? + "\n").map_err(|e| Error::io(&path, e))?;
        self.params.save(&dir.join(PARAMS_DIR))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let h: SavedHeader = serde_json::from_str(&text)?;
        let mut model = FusionModel::new(&h.config, h.dims, h.classes, h.task, &mut Rng::new(0))?;
        model.params.load_values(&dir.join(PARAMS_DIR))?;
        Ok(model)
    }

    /// Rounds every parameter through f32, the precision checkpoints store.
    pub fn quantize(&mut self) {
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            let q = mpf::quantize(self.params.get(id));
            *self.params.get_mut(id) = q;
        }
    }
}

fn affine(tape: &mut Tape, x: Var, l: Linear) -> Var {
    let (w, b) = (tape.param(l.w), tape.param(l.b));
    let y = tape.matmul(x, w);
    tape.add_row(y, b)
}

fn norm_affine(tape: &mut Tape, x: Var, n: Norm) -> Var {
    let y = tape.layer_norm(x, LN_EPS);
    let (g, b) = (tape.param(n.gain), tape.param(n.bias));
    let y = tape.mul_row(y, g);
    tape.add_row(y, b)
}

/// `LayerNorm(x·W + b)` with optional gain and bias on the normalised rows.
pub fn project(tape: &mut Tape, x: Var, w: ParamId, b: ParamId, affine_norm: Option<(ParamId, ParamId)>) -> Var {
    let y = affine(tape, x, Linear { w, b });
    match affine_norm {
        Some((gain, bias)) => norm_affine(tape, y, Norm { gain, bias }),
        None => tape.layer_norm(y, LN_EPS),
    }
}

/// Sinusoidal table: `PE(t, 2i) = sin(t / 10000^{2i/d})`, `PE(t, 2i+1) = cos(…)`.
pub fn positional_encoding(t: usize, d: usize) -> Matrix {
    let mut pe = Matrix::zeros(t, d);
    for pos in 0..t {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            pe[(pos, 2 * i)] = angle.sin();
            pe[(pos, 2 * i + 1)] = angle.cos();
        }
    }
    pe
}

fn attention_pool_var(tape: &mut Tape, h: Var, w: Var) -> (Var, Vec<f64>) {
    let scores = tape.matmul_t(w, h);
    let alpha = tape.softmax_rows(scores);
    let pooled = tape.matmul(alpha, h);
    let weights = tape.value(alpha).as_slice().to_vec();
    (pooled, weights)
}

/// Pools `h` (T × d) with scores `h · w`; returns the pooled row and the weights.
pub fn attention_pool(h: &Matrix, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if h.cols() != w.len() || h.rows() == 0 {
        return Err(Error::Dimension(format!("pool over {:?} with {} scores", h.shape(), w.len())));
    }
    let empty = ParamSet::new();
    let mut tape = Tape::new(&empty);
    let hv = tape.constant(h.clone());
    let wv = tape.constant(Matrix::row_vector(w));
    let (pooled, alpha) = attention_pool_var(&mut tape, hv, wv);
    Ok((tape.value(pooled).as_slice().to_vec(), alpha))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> InputDims {
        InputDims {
            audio: 5,
            visual: 6,
            text: 4,
        }
    }

    fn random_input(rng: &mut Rng, t: usize, classes: usize) -> FusionInput {
        let m = |rng: &mut Rng, r, c| Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap();
        let mut target = vec![0.0; classes];
        target[0] = 1.0;
        FusionInput {
            audio: m(rng, t, 5),
            visual: m(rng, t, 6),
            text: m(rng, 1, 4),
            target,
        }
    }

    #[test]
    fn positional_table_values() {
        let pe = positional_encoding(4, 8);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((pe[(1, 0)] - 0.841_470_984_807_896_5).abs() < 1e-15);
        assert!(pe.as_slice().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn projection_rows_are_normalised() {
        let mut rng = Rng::new(1);
        let mut p = ParamSet::new();
        let w = p.add_xavier("w", "g", 5, 8, &mut rng);
        let b = p.add("b", "g", Matrix::zeros(1, 8));
        let mut tape = Tape::new(&p);
        let x = tape.constant(random_input(&mut rng, 3, 2).audio);
        let z = project(&mut tape, x, w, b, None);
        for row in tape.value(z).iter_rows() {
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-4, "{mean} {var}");
        }
    }

    #[test]
    fn constant_row_projects_near_zero() {
        let mut p = ParamSet::new();
        let w = p.add("w", "g", Matrix::zeros(2, 4));
        let b = p.add("b", "g", Matrix::filled(1, 4, 3.0));
        let mut tape = Tape::new(&p);
        let x = tape.constant(Matrix::filled(1, 2, 1.0));
        let z = project(&mut tape, x, w, b, None);
        assert!(tape.value(z).max_abs() < 1e-12);
    }

    #[test]
    fn pooling_identities() {
        let h = Matrix::from_rows(&[vec![1.0, 2.0], vec![5.0, -2.0]]).unwrap();
        let (pooled, alpha) = attention_pool(&h, &[0.0, 0.0]).unwrap();
        assert_eq!(alpha, vec![0.5, 0.5]);
        assert_eq!(pooled, vec![3.0, 0.0]);
        // first frame scores ln 3, second 0
        let h = Matrix::from_rows(&[vec![3f64.ln(), 4.0], vec![0.0, 8.0]]).unwrap();
        let (pooled, alpha) = attention_pool(&h, &[1.0, 0.0]).unwrap();
        assert!((alpha[0] - 0.75).abs() < 1e-15 && (alpha[1] - 0.25).abs() < 1e-15);
        assert!((pooled[1] - (0.75 * 4.0 + 0.25 * 8.0)).abs() < 1e-12);
        let single = Matrix::row_vector(&[0.3, -0.7]);
        let (pooled, alpha) = attention_pool(&single, &[9.0, 1.0]).unwrap();
        assert_eq!((pooled.as_slice(), alpha.as_slice()), (single.as_slice(), &[1.0][..]));
    }

    #[test]
    fn default_width_and_head_shapes() {
        let mut rng = Rng::new(0);
        let dims = InputDims {
            audio: 512,
            visual: 1000,
            text: 1024,
        };
        let m = FusionModel::new(&FusionConfig::default(), dims, 2, TaskKind::Binary, &mut rng).unwrap();
        let w0 = m.params.get(m.params.id("head.0.w").unwrap());
        assert_eq!(w0.shape(), (384, 512));
        assert_eq!(m.params.get(m.params.id("head.1.w").unwrap()).shape(), (512, 256));
        assert_eq!(m.params.get(m.params.id("head.out.w").unwrap()).shape(), (256, 2));
    }

    #[test]
    fn zero_head_gives_bias_logits() {
        let mut rng = Rng::new(3);
        let mut m = FusionModel::new(&FusionConfig::tiny(), dims(), 3, TaskKind::Ternary, &mut rng).unwrap();
        for name in ["head.out.w", "head.out.b"] {
            let id = m.params.id(name).unwrap();
            let v = if name.ends_with(".b") { Matrix::row_vector(&[0.5, -1.0, 2.0]) } else { Matrix::zeros(8, 3) };
            *m.params.get_mut(id) = v;
        }
        let x = random_input(&mut rng, 3, 3);
        let mut tape = Tape::new(&m.params);
        let f = m.forward(&mut tape, &x, &mut Mode::Eval).unwrap();
        assert_eq!(tape.value(f.logits).as_slice(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn eval_forward_is_deterministic_and_pools_sum_to_one() {
        let mut rng = Rng::new(4);
        let m = FusionModel::new(&FusionConfig::tiny(), dims(), 2, TaskKind::Binary, &mut rng).unwrap();
        let x = random_input(&mut rng, 4, 2);
        let a = m.predict_proba(&x).unwrap();
        assert_eq!(a, m.predict_proba(&x).unwrap());
        let mut tape = Tape::new(&m.params);
        let f = m.forward(&mut tape, &x, &mut Mode::Eval).unwrap();
        assert!((f.audio_alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frame_order_matters_only_through_positions() {
        let mut rng = Rng::new(5);
        let x = random_input(&mut rng, 4, 2);
        let mut permuted = x.clone();
        permuted.audio = x.audio.select_rows(&[2, 0, 3, 1]);
        permuted.visual = x.visual.select_rows(&[2, 0, 3, 1]);
        for (pe, should_change) in [(Positional::Sinusoidal, true), (Positional::None, false)] {
            let cfg = FusionConfig {
                positional: pe,
                ..FusionConfig::tiny()
            };
            let m = FusionModel::new(&cfg, dims(), 2, TaskKind::Binary, &mut Rng::new(6)).unwrap();
            let a = m.predict_proba(&x).unwrap();
            let b = m.predict_proba(&permuted).unwrap();
            let diff = (a[0] - b[0]).abs();
            assert_eq!(diff > 1e-9, should_change, "{pe:?}: {diff}");
        }
    }

    #[test]
    fn rejects_wrong_widths() {
        let mut rng = Rng::new(7);
        let m = FusionModel::new(&FusionConfig::tiny(), dims(), 2, TaskKind::Binary, &mut rng).unwrap();
        let mut x = random_input(&mut rng, 2, 2);
        x.text = Matrix::zeros(1, 3);
        assert!(matches!(m.predict_proba(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn checkpoint_round_trip_after_quantize() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(8);
        let mut m = FusionModel::new(&FusionConfig::tiny(), dims(), 2, TaskKind::Binary, &mut rng).unwrap();
        m.quantize();
        m.save(dir.path()).unwrap();
        let back = FusionModel::load(dir.path()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
    }
}
