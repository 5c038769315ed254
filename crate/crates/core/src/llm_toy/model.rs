use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prompt::{PromptTemplate, Vocab, AUDIO_SLOT, TEXT_SLOT, VISUAL_SLOT};
use crate::dataset::{mpf, Sample, TaskKind, TaskSpec};
use crate::fusenet::InputDims;
use crate::nn::{ParamId, ParamSet, Tape, Var};
use crate::numcore::{softmax, Matrix, Rng};
use crate::{Error, Result};

pub const GROUP_PROJECTOR: &str = "projector";
pub const GROUP_BACKBONE: &str = "backbone";
pub const GROUP_HEAD: &str = "head";
pub const GROUP_LORA: &str = "lora";

pub const CONFIG_FILE: &str = "llm_toy.json";
pub const PARAMS_DIR: &str = "params";

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmToyConfig {
    /// Decoder embedding width.
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// Longest token sequence (pseudo-tokens plus prompt).
    pub max_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub stage1_lr: f64,
    pub stage1_epochs: usize,
    pub stage2_lr_lora: f64,
    pub stage2_lr_proj: f64,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    /// One pseudo-token per modality (frame mean) instead of one per frame.
    pub pooled_tokens: bool,
    /// Tokens produced by free-running generation.
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for LlmToyConfig {
    fn default() -> Self {
        LlmToyConfig {
            d_model: 64,
            layers: 2,
            heads: 4,
            max_len: 256,
            lora_rank: 4,
            lora_alpha: 8.0,
            stage1_lr: 5e-5,
            stage1_epochs: 5,
            stage2_lr_lora: 1e-5,
            stage2_lr_proj: 5e-5,
            stage2_epochs: 3,
            batch_size: 2,
            clip_norm: 1.0,
            pooled_tokens: false,
            max_new_tokens: 4,
            seed: 0,
        }
    }
}

impl LlmToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.lora_rank == 0 || self.lora_rank > self.d_model {
            return bad(format!("lora_rank {} outside [1, {}]", self.lora_rank, self.d_model));
        }
        for lr in [self.stage1_lr, self.stage2_lr_lora, self.stage2_lr_proj] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("learning rate {lr} must be finite and non-negative"));
            }
        }
        if self.batch_size == 0 || self.max_len == 0 || !(self.clip_norm > 0.0) {
            return bad("batch_size, max_len and clip_norm must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Lora {
    a: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    norm1: Norm,
    q: Lin,
    k: Lin,
    v: Lin,
    o: Lin,
    q_lora: Option<Lora>,
    v_lora: Option<Lora>,
    norm2: Norm,
    up: Lin,
    down: Lin,
}

#[derive(Debug, Clone)]
struct Layout {
    proj_audio: Lin,
    proj_visual: Lin,
    proj_text: Lin,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    final_norm: Norm,
    head: Lin,
}

/// Projectors, a small causal decoder, and an output head over the vocabulary.
/// Weights are stored `d_out × d_in`; a row input `x` maps to `x·Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct ToyLlm {
    pub config: LlmToyConfig,
    pub dims: InputDims,
    pub task: TaskSpec,
    pub template: PromptTemplate,
    pub vocab: Vocab,
    pub params: ParamSet,
    layout: Layout,
    prompt_ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedHeader {
    config: LlmToyConfig,
    dims: InputDims,
    task: TaskKind,
    lora: bool,
}

fn lin(p: &mut ParamSet, name: &str, group: &str, d_out: usize, d_in: usize, rng: &mut Rng) -> Lin {
    Lin {
        w: p.add_xavier(format!("{name}.w"), group, d_out, d_in, rng),
        b: p.add(format!("{name}.b"), group, Matrix::zeros(1, d_out)),
    }
}

fn norm(p: &mut ParamSet, name: &str, d: usize) -> Norm {
    Norm {
        gain: p.add(format!("{name}.gain"), GROUP_BACKBONE, Matrix::filled(1, d, 1.0)),
        bias: p.add(format!("{name}.bias"), GROUP_BACKBONE, Matrix::zeros(1, d)),
    }
}

/// Additive causal mask: 0 on and below the diagonal, −∞ above.
pub fn causal_mask(n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            m[(i, j)] = f64::NEG_INFINITY;
        }
    }
    m
}

impl ToyLlm {
    pub fn new(config: &LlmToyConfig, dims: InputDims, task: TaskKind, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let vocab = Vocab::build();
        let task = TaskSpec::new(task);
        let template = PromptTemplate::new(&task);
        let d = config.d_model;
        let v = vocab.len();
        let mut p = ParamSet::new();
        let proj_audio = lin(&mut p, "proj.audio", GROUP_PROJECTOR, d, dims.audio, rng);
        let proj_visual = lin(&mut p, "proj.visual", GROUP_PROJECTOR, d, dims.visual, rng);
        let proj_text = lin(&mut p, "proj.text", GROUP_PROJECTOR, d, dims.text, rng);
        let normal = |rows: usize, cols: usize, rng: &mut Rng| {
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| 0.02 * rng.normal()).collect()).unwrap()
        };
        let tok_emb = p.add("tok_emb", GROUP_BACKBONE, normal(v, d, rng));
        let pos_emb = p.add("pos_emb", GROUP_BACKBONE, normal(config.max_len, d, rng));
        let blocks = (0..config.layers)
            .map(|l| {
                let n = format!("blk.{l}");
                Block {
                    norm1: norm(&mut p, &format!("{n}.ln1"), d),
                    q: lin(&mut p, &format!("{n}.q"), GROUP_BACKBONE, d, d, rng),
                    k: lin(&mut p, &format!("{n}.k"), GROUP_BACKBONE, d, d, rng),
                    v: lin(&mut p, &format!("{n}.v"), GROUP_BACKBONE, d, d, rng),
                    o: lin(&mut p, &format!("{n}.o"), GROUP_BACKBONE, d, d, rng),
                    q_lora: None,
                    v_lora: None,
                    norm2: norm(&mut p, &format!("{n}.ln2"), d),
                    up: lin(&mut p, &format!("{n}.up"), GROUP_BACKBONE, 4 * d, d, rng),
                    down: lin(&mut p, &format!("{n}.down"), GROUP_BACKBONE, d, 4 * d, rng),
                }
            })
            .collect();
        let final_norm = norm(&mut p, "final_ln", d);
        let head = lin(&mut p, "head", GROUP_HEAD, v, d, rng);
        let prompt_ids = vocab.encode(&template.render());
        Ok(ToyLlm {
            config: config.clone(),
            dims,
            task,
            template,
            vocab,
            params: p,
            layout: Layout {
                proj_audio,
                proj_visual,
                proj_text,
                tok_emb,
                pos_emb,
                blocks,
                final_norm,
                head,
            },
            prompt_ids,
        })
    }

    pub fn lora_injected(&self) -> bool {
        self.layout.blocks.iter().any(|b| b.q_lora.is_some())
    }

    /// Adds rank-`r` adapters to the query and value weights of every block.
    /// The wrapped layers compute exactly what the base layers did.
    pub fn inject_lora(&mut self, rng: &mut Rng) -> Result<()> {
        if self.lora_injected() {
            return Err(Error::Config("LoRA adapters are already injected".into()));
        }
        let r = self.config.lora_rank;
        for (l, block) in self.layout.blocks.iter_mut().enumerate() {
            for (which, slot) in [("q", &mut block.q_lora), ("v", &mut block.v_lora)] {
                let base = self.params.get(if which == "q" { block.q.w } else { block.v.w }).clone();
                let wrapped = super::lora::lora_wrap(&base, r, self.config.lora_alpha, rng)?;
                *slot = Some(Lora {
                    a: self.params.add(format!("blk.{l}.{which}.lora_a"), GROUP_LORA, wrapped.a),
                    b: self.params.add(format!("blk.{l}.{which}.lora_b"), GROUP_LORA, wrapped.b),
                });
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self, group: Option<&str>) -> usize {
        self.params.scalar_count(group)
    }

    pub fn option_ids(&self) -> Vec<usize> {
        self.vocab.option_ids(&self.template.options)
    }

    /// Number of pseudo-tokens a sample contributes.
    pub fn pseudo_token_count(&self, sample: &Sample) -> usize {
        if self.config.pooled_tokens {
            3
        } else {
            sample.audio.frames() + sample.visual.frames() + 1
        }
    }

    fn check(&self, sample: &Sample) -> Result<()> {
        let ok = sample.audio.dim() == self.dims.audio
            && sample.visual.dim() == self.dims.visual
            && sample.text.len() == self.dims.text;
        if !ok {
            return Err(Error::Dimension(format!(
                "sample {} widths ({}, {}, {}) do not match projectors {:?}",
                sample.id,
                sample.audio.dim(),
                sample.visual.dim(),
                sample.text.len(),
                self.dims
            )));
        }
        Ok(())
    }

    fn frames(&self, m: &Matrix) -> Matrix {
        if self.config.pooled_tokens {
            Matrix::row_vector(&m.column_means())
        } else {
            m.clone()
        }
    }

    /// Pseudo-token embeddings in order audio frames, visual frames, text.
    pub fn project_features(&self, tape: &mut Tape, sample: &Sample) -> Result<Var> {
        self.check(sample)?;
        let l = &self.layout;
        let a = tape.constant(self.frames(&sample.audio.values));
        let v = tape.constant(self.frames(&sample.visual.values));
        let t = tape.constant(Matrix::row_vector(&sample.text));
        let pa = linear(tape, a, l.proj_audio, None, 0.0);
        let pv = linear(tape, v, l.proj_visual, None, 0.0);
        let pt = linear(tape, t, l.proj_text, None, 0.0);
        Ok(tape.concat_rows(&[pa, pv, pt]))
    }

    /// Input embeddings for `sample` followed by `extra` generated tokens.
    fn embed(&self, tape: &mut Tape, sample: &Sample, extra: &[usize]) -> Result<Var> {
        let pseudo = self.project_features(tape, sample)?;
        let slots = [AUDIO_SLOT, VISUAL_SLOT, TEXT_SLOT].map(|s| self.vocab.id(s));
        let words: Vec<usize> = self
            .prompt_ids
            .iter()
            .copied()
            .filter(|id| !slots.contains(id))
            .chain(extra.iter().copied())
            .collect();
        let emb = tape.param(self.layout.tok_emb);
        let w = tape.gather_rows(emb, &words);
        Ok(tape.concat_rows(&[pseudo, w]))
    }

    /// Runs the decoder over `x` (n × D) and returns the vocabulary logits of
    /// the rows in `positions`.
    pub fn decode(&self, tape: &mut Tape, x: Var, positions: &[usize]) -> Result<Var> {
        let n = tape.value(x).rows();
        if n > self.config.max_len {
            return Err(Error::Dimension(format!(
                "sequence of {n} tokens exceeds max_len {}",
                self.config.max_len
            )));
        }
        let l = &self.layout;
        let table = tape.param(l.pos_emb);
        let rows: Vec<usize> = (0..n).collect();
        let pos = tape.gather_rows(table, &rows);
        let mut h = tape.add(x, pos);
        let mask = tape.constant(causal_mask(n));
        for b in &l.blocks {
            h = self.block(tape, h, b, mask);
        }
        let last = tape.gather_rows(h, positions);
        let last = norm_affine(tape, last, l.final_norm);
        Ok(linear(tape, last, l.head, None, 0.0))
    }

    fn block(&self, tape: &mut Tape, x: Var, b: &Block, mask: Var) -> Var {
        let heads = self.config.heads;
        let dh = self.config.d_model / heads;
        let s = self.config.lora_alpha / self.config.lora_rank as f64;
        let n = norm_affine(tape, x, b.norm1);
        let q = linear(tape, n, b.q, b.q_lora, s);
        let k = linear(tape, n, b.k, None, s);
        let v = linear(tape, n, b.v, b.v_lora, s);
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice_cols(q, h * dh, dh);
            let kh = tape.slice_cols(k, h * dh, dh);
            let vh = tape.slice_cols(v, h * dh, dh);
            let sc = tape.matmul_t(qh, kh);
            let sc = tape.scale(sc, 1.0 / (dh as f64).sqrt());
            let sc = tape.add(sc, mask);
            let att = tape.softmax_rows(sc);
            outs.push(tape.matmul(att, vh));
        }
        let cat = tape.concat_cols(&outs);
        let o = linear(tape, cat, b.o, None, s);
        let x = tape.add(x, o);
        let n = norm_affine(tape, x, b.norm2);
        let u = linear(tape, n, b.up, None, s);
        let u = tape.relu(u);
        let dn = linear(tape, u, b.down, None, s);
        tape.add(x, dn)
    }

    /// Logits at the answer slot (the last prompt position).
    pub fn answer_logits(&self, tape: &mut Tape, sample: &Sample) -> Result<Var> {
        let x = self.embed(tape, sample, &[])?;
        let n = tape.value(x).rows();
        self.decode(tape, x, &[n - 1])
    }

    /// Probabilities of each option token at the answer slot, renormalised
    /// over the options.
    pub fn option_probs(&self, sample: &Sample) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let logits = self.answer_logits(&mut tape, sample)?;
        let z = tape.value(logits).as_slice();
        let opts: Vec<f64> = self.option_ids().iter().map(|&i| z[i]).collect();
        Ok(softmax(&opts))
    }

    /// Greedy free-running generation after the prompt.
    pub fn generate(&self, sample: &Sample) -> Result<String> {
        let eos = self.vocab.id(super::prompt::EOS);
        let mut out = Vec::new();
        for _ in 0..self.config.max_new_tokens {
            let mut tape = Tape::new(&self.params);
            let x = self.embed(&mut tape, sample, &out)?;
            let n = tape.value(x).rows();
            let logits = self.decode(&mut tape, x, &[n - 1])?;
            let next = crate::numcore::argmax(tape.value(logits).as_slice());
            if next == eos {
                break;
            }
            out.push(next);
        }
        Ok(self.vocab.decode(&out))
    }

    /// Logits at every position for a plain token sequence (no pseudo-tokens).
    pub fn token_logits(&self, tokens: &[usize]) -> Result<Matrix> {
        let mut tape = Tape::new(&self.params);
        let emb = tape.param(self.layout.tok_emb);
        let x = tape.gather_rows(emb, tokens);
        let all: Vec<usize> = (0..tokens.len()).collect();
        let logits = self.decode(&mut tape, x, &all)?;
        Ok(tape.value(logits).clone())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let header = SavedHeader {
            config: self.config.clone(),
            dims: self.dims,
            task: self.task.name,
            lora: self.lora_injected(),
        };
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&header)? + "\n").map_err(|e| Error::io(&path, e))?;
        self.params.save(&dir.join(PARAMS_DIR))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let h: SavedHeader = serde_json::from_str(&text)?;
        let mut rng = Rng::new(0);
        let mut model = ToyLlm::new(&h.config, h.dims, h.task, &mut rng)?;
        if h.lora {
            model.inject_lora(&mut rng)?;
        }
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

/// `x·Wᵀ + b`, plus `s·(x·Aᵀ)·Bᵀ` when an adapter is present.
fn linear(tape: &mut Tape, x: Var, l: Lin, lora: Option<Lora>, s: f64) -> Var {
    let (w, b) = (tape.param(l.w), tape.param(l.b));
    let y = tape.matmul_t(x, w);
    let y = match lora {
        Some(ad) => {
            let (a, bb) = (tape.param(ad.a), tape.param(ad.b));
            let xa = tape.matmul_t(x, a);
            let d = tape.matmul_t(xa, bb);
            let d = tape.scale(d, s);
            tape.add(y, d)
        }
        None => y,
    };
    tape.add_row(y, b)
}

fn norm_affine(tape: &mut Tape, x: Var, n: Norm) -> Var {
    let y = tape.layer_norm(x, LN_EPS);
    let (g, b) = (tape.param(n.gain), tape.param(n.bias));
    let y = tape.mul_row(y, g);
    tape.add_row(y, b)
}
