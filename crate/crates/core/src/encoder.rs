//! Token/position embedding and a pre-norm transformer encoder stack.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};

/// Standard deviation of every random initialization.
pub const INIT_STD: f64 = 0.02;
pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub max_positions: usize,
    pub dropout_rate: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            d_ffn: 64,
            max_positions: 512 + 64,
            dropout_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("d_model {d_model} is not divisible by n_heads {n_heads}")]
    HeadSplit { d_model: usize, n_heads: usize },
    #[error("{field} must be at least {min}, got {value}")]
    TooSmall {
        field: &'static str,
        value: usize,
        min: usize,
    },
    #[error("{field} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        field: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },
    #[error("dropout rate {0} outside [0, 1)")]
    Dropout(f64),
    #[error("lambda must be non-negative, got {0}")]
    Lambda(f64),
    #[error("top_k {top_k} exceeds pool size {pool_size}")]
    TopK { top_k: usize, pool_size: usize },
    #[error("language assignment: {0}")]
    Assignment(alloc::string::String),
}

impl EncoderConfig {
    /// Checks the head split and that `max_positions` leaves room for a
    /// 512-token input plus `prompt_rows` prompt rows.
    pub fn validate(&self, prompt_rows: usize) -> Result<(), ConfigError> {
        for (field, value, min) in [
            ("n_layers", self.n_layers, 1),
            ("n_heads", self.n_heads, 1),
            ("d_model", self.d_model, 1),
            ("d_ffn", self.d_ffn, 1),
        ] {
            if value < min {
                return Err(ConfigError::TooSmall { field, value, min });
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ConfigError::HeadSplit {
                d_model: self.d_model,
                n_heads: self.n_heads,
            });
        }
        let need = 512 + prompt_rows;
        if self.max_positions < need {
            return Err(ConfigError::TooSmall {
                field: "max_positions",
                value: self.max_positions,
                min: need,
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ConfigError::Dropout(self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Handles to the embedding and encoder parameters inside a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    vocab_size: usize,
    token_table: ParamId,
    position_table: ParamId,
    layers: Vec<Layer>,
    ln_f_g: ParamId,
    ln_f_b: ParamId,
}

/// Dropout source for training-time forward passes.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

pub(crate) fn normal_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape, data).expect("shape matches")
}

impl Encoder {
    /// Registers freshly initialized embedding and encoder parameters:
    /// normal(0, 0.02) matrices, zero biases, unit layer-norm gains.
    pub fn init_random(store: &mut ParamStore, config: &EncoderConfig, vocab_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = config.d_model;
        let f = config.d_ffn;
        let mut w = |store: &mut ParamStore, name: &str, shape: Vec<usize>| store.insert(name, normal_tensor(rng, shape, INIT_STD));
        let token_table = w(store, "embed.tok", alloc::vec![vocab_size, d]);
        let position_table = w(store, "embed.pos", alloc::vec![config.max_positions, d]);
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = |s: &str| format!("enc.{l}.{s}");
            let ln1_g = store.insert(p("ln1.g"), Tensor::filled(alloc::vec![d], 1.0));
            let ln1_b = store.insert(p("ln1.b"), Tensor::zeros(alloc::vec![d]));
            let wq = w(store, &p("attn.wq"), alloc::vec![d, d]);
            let bq = store.insert(p("attn.bq"), Tensor::zeros(alloc::vec![d]));
            let wk = w(store, &p("attn.wk"), alloc::vec![d, d]);
            let bk = store.insert(p("attn.bk"), Tensor::zeros(alloc::vec![d]));
            let wv = w(store, &p("attn.wv"), alloc::vec![d, d]);
            let bv = store.insert(p("attn.bv"), Tensor::zeros(alloc::vec![d]));
            let wo = w(store, &p("attn.wo"), alloc::vec![d, d]);
            let bo = store.insert(p("attn.bo"), Tensor::zeros(alloc::vec![d]));
            let ln2_g = store.insert(p("ln2.g"), Tensor::filled(alloc::vec![d], 1.0));
            let ln2_b = store.insert(p("ln2.b"), Tensor::zeros(alloc::vec![d]));
            let w1 = w(store, &p("ffn.w1"), alloc::vec![d, f]);
            let b1 = store.insert(p("ffn.b1"), Tensor::zeros(alloc::vec![f]));
            let w2 = w(store, &p("ffn.w2"), alloc::vec![f, d]);
            let b2 = store.insert(p("ffn.b2"), Tensor::zeros(alloc::vec![d]));
            layers.push(Layer {
                ln1_g,
                ln1_b,
                wq,
                bq,
                wk,
                bk,
                wv,
                bv,
                wo,
                bo,
                ln2_g,
                ln2_b,
                w1,
                b1,
                w2,
                b2,
            });
        }
        let ln_f_g = store.insert("enc.ln_f.g", Tensor::filled(alloc::vec![d], 1.0));
        let ln_f_b = store.insert("enc.ln_f.b", Tensor::zeros(alloc::vec![d]));
        Encoder {
            config: config.clone(),
            vocab_size,
            token_table,
            position_table,
            layers,
            ln_f_g,
            ln_f_b,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn token_table(&self) -> ParamId {
        self.token_table
    }

    pub fn position_table(&self) -> ParamId {
        self.position_table
    }

    /// `X_e[i] = token_table[ids[i]] + position_table[i]`.
    pub fn embed(&self, g: &mut Graph<'_>, ids: &[usize]) -> Result<Var, TensorError> {
        if ids.is_empty() {
            return Err(TensorError::Empty { op: "embed" });
        }
        if ids.len() > self.config.max_positions {
            return Err(TensorError::OutOfRange {
                op: "embed",
                index: ids.len(),
                bound: self.config.max_positions,
            });
        }
        let tok = g.param(self.token_table);
        let pos = g.param(self.position_table);
        let t = g.gather_rows(tok, ids)?;
        let p = g.rows(pos, 0, ids.len())?;
        g.add(t, p)
    }

    /// Runs the encoder stack over `x` (`[n, D]`). Positions with
    /// `valid[j] == false` receive zero attention weight from every query.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        valid: Option<&[bool]>,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<Var, TensorError> {
        self.encode_traced(g, x, valid, dropout, None)
    }

    /// As [`Encoder::encode`], also pushing every head's attention matrix
    /// into `trace`.
    pub fn encode_traced(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        valid: Option<&[bool]>,
        mut dropout: Option<&mut Dropout<'_>>,
        mut trace: Option<&mut Vec<Var>>,
    ) -> Result<Var, TensorError> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 2 || shape[1] != self.config.d_model {
            return Err(TensorError::ShapeMismatch {
                op: "encode",
                left: shape,
                right: alloc::vec![self.config.max_positions, self.config.d_model],
            });
        }
        let n = shape[0];
        if n > self.config.max_positions {
            return Err(TensorError::OutOfRange {
                op: "encode",
                index: n,
                bound: self.config.max_positions,
            });
        }
        if let Some(v) = valid {
            if v.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "encode mask",
                    left: alloc::vec![n],
                    right: alloc::vec![v.len()],
                });
            }
        }
        let dh = self.config.head_dim();
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut h = x;
        for layer in &self.layers {
            let (g1, b1) = (g.param(layer.ln1_g), g.param(layer.ln1_b));
            let a = g.layer_norm(h, g1, b1, LN_EPS)?;
            let q = self.affine(g, a, layer.wq, layer.bq)?;
            let k = self.affine(g, a, layer.wk, layer.bk)?;
            let v = self.affine(g, a, layer.wv, layer.bv)?;
            let mut heads = Vec::with_capacity(self.config.n_heads);
            for head in 0..self.config.n_heads {
                let (c0, c1) = (head * dh, (head + 1) * dh);
                let qh = g.cols(q, c0, c1)?;
                let kh = g.cols(k, c0, c1)?;
                let vh = g.cols(v, c0, c1)?;
                let scores = g.matmul_nt(qh, kh)?;
                let scores = g.scale(scores, scale);
                let attn = g.softmax_rows(scores, valid)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(attn);
                }
                heads.push(g.matmul(attn, vh)?);
            }
            let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
            let o = self.affine(g, cat, layer.wo, layer.bo)?;
            let o = apply_dropout(g, o, dropout.as_deref_mut())?;
            h = g.add(h, o)?;

            let (g2, b2) = (g.param(layer.ln2_g), g.param(layer.ln2_b));
            let a = g.layer_norm(h, g2, b2, LN_EPS)?;
            let f = self.affine(g, a, layer.w1, layer.b1)?;
            let f = g.gelu(f);
            let f = self.affine(g, f, layer.w2, layer.b2)?;
            let f = apply_dropout(g, f, dropout.as_deref_mut())?;
            h = g.add(h, f)?;
        }
        let (gf, bf) = (g.param(self.ln_f_g), g.param(self.ln_f_b));
        g.layer_norm(h, gf, bf, LN_EPS)
    }

    fn affine(&self, g: &mut Graph<'_>, x: Var, w: ParamId, b: ParamId) -> Result<Var, TensorError> {
        let (w, b) = (g.param(w), g.param(b));
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }

    /// Every parameter belonging to the embedding layer.
    pub fn embedding_params(&self) -> [ParamId; 2] {
        [self.token_table, self.position_table]
    }
}

fn apply_dropout(g: &mut Graph<'_>, x: Var, dropout: Option<&mut Dropout<'_>>) -> Result<Var, TensorError> {
    match dropout {
        Some(d) if d.rate > 0.0 => {
            let keep = 1.0 - d.rate;
            let mask = (0..g.value(x).len())
                .map(|_| if d.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            g.mul_const(x, mask)
        }
        _ => Ok(x),
    }
}
