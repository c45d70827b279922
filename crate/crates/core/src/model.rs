//! The full detector: embedding, pool selection, encoder stack and a
//! two-logit classifier, plus the joint training objective.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CodeSample, Language};
use crate::encoder::{normal_tensor, ConfigError, Dropout, Encoder, EncoderConfig, INIT_STD};
use crate::pool::{query, select, select_masked, LanguageAssignment, ParameterPool, PoolConfig, PoolError, QuerySource, Selection};
use crate::tensor::{softmax, Graph, ParamId, ParamStore, Tensor, TensorError, Var};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Unrestricted key-query selection in training and inference.
    PoolQuery,
    /// Language-restricted selection while training, unrestricted at inference.
    PoolMasked,
    /// No pool; the classifier reads the `[CLS]` output row.
    BackboneOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::PoolQuery, Mode::PoolMasked, Mode::BackboneOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::PoolQuery => "pool_query",
            Mode::PoolMasked => "pool_masked",
            Mode::BackboneOnly => "backbone_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Mode::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn uses_pool(self) -> bool {
        self != Mode::BackboneOnly
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub vocab_size: usize,
    pub pool: PoolConfig,
    pub mode: Mode,
    pub lambda: f64,
    pub query_from: QuerySource,
    pub assignment: LanguageAssignment,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            vocab_size: 1024,
            pool: PoolConfig::default(),
            mode: Mode::PoolMasked,
            lambda: 0.1,
            query_from: QuerySource::default(),
            assignment: LanguageAssignment::contiguous(1),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.pool.validate()?;
        self.encoder.validate(self.pool.prompt_rows())?;
        if self.vocab_size < 8 {
            return Err(ConfigError::TooSmall {
                field: "vocab_size",
                value: self.vocab_size,
                min: 8,
            });
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ConfigError::Lambda(self.lambda));
        }
        if self.mode == Mode::PoolMasked {
            self.assignment.validate(self.pool.size)?;
            for lang in Language::ALL {
                let n = self.assignment.allowed(lang).len();
                if n < self.pool.top_k {
                    return Err(ConfigError::TopK {
                        top_k: self.pool.top_k,
                        pool_size: n,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("parameter layout mismatch: {}", .0.join(", "))]
    Layout(Vec<String>),
}

/// A tokenized sample ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub id: String,
    pub language: Language,
    pub label: u8,
    pub cwe: Option<String>,
    pub ids: Vec<usize>,
}

impl EncodedSample {
    pub fn from_sample(sample: &CodeSample, vocab: &Vocabulary, max_tokens: usize) -> Self {
        EncodedSample {
            id: sample.id.clone(),
            language: sample.language,
            label: sample.label,
            cwe: sample.cwe.clone(),
            ids: vocab.encode(&sample.code, max_tokens).ids().to_vec(),
        }
    }

    pub fn encode_all(samples: &[CodeSample], vocab: &Vocabulary, max_tokens: usize) -> Vec<Self> {
        samples.iter().map(|s| Self::from_sample(s, vocab, max_tokens)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: [f64; 2],
    pub probability: f64,
    pub label: u8,
    pub selection: Option<Selection>,
}

impl Prediction {
    /// Argmax over the two logits, ties resolving to class 0.
    pub fn from_logits(logits: [f64; 2], selection: Option<Selection>) -> Self {
        let p = softmax(&logits);
        Prediction {
            logits,
            probability: p[1],
            label: u8::from(logits[1] > logits[0]),
            selection,
        }
    }
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    pub query: Option<Var>,
    /// Mean similarity between the query and the selected keys.
    pub phi: Option<Var>,
    pub selection: Option<Selection>,
}

/// `CE(logits, label) - lambda * phi`.
pub fn objective(g: &mut Graph<'_>, logits: Var, label: u8, phi: Option<Var>, lambda: f64) -> Result<Var, TensorError> {
    let ce = g.cross_entropy(logits, usize::from(label))?;
    match phi {
        Some(phi) if lambda != 0.0 => {
            let pull = g.scale(phi, lambda);
            g.sub(ce, pull)
        }
        _ => Ok(ce),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulVulnModel {
    config: ModelConfig,
    params: ParamStore,
    encoder: Encoder,
    pool: ParameterPool,
    cls_w: ParamId,
    cls_b: ParamId,
}

impl MulVulnModel {
    /// Seeded random initialization. Parameters are drawn in a fixed order:
    /// embeddings, encoder layers, pool matrices, keys, classifier.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Encoder::init_random(&mut params, &config.encoder, config.vocab_size, &mut rng);
        let pool = ParameterPool::init_random(&mut params, &config.pool, config.encoder.d_model, &mut rng);
        let cls_w = params.insert("cls.w", normal_tensor(&mut rng, alloc::vec![config.encoder.d_model, 2], INIT_STD));
        let cls_b = params.insert("cls.b", Tensor::zeros(alloc::vec![2]));
        Ok(MulVulnModel {
            config,
            params,
            encoder,
            pool,
            cls_w,
            cls_b,
        })
    }

    /// Rebuilds a model from stored tensors. Every expected name must be
    /// present with the expected shape and nothing else may appear.
    pub fn from_params(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        let mut model = MulVulnModel::new(config, 0)?;
        let mut problems = Vec::new();
        let mut seen = alloc::vec![false; model.params.len()];
        for (name, tensor) in tensors {
            match model.params.id(&name) {
                None => problems.push(alloc::format!("unexpected {name}")),
                Some(id) => {
                    seen[id.0] = true;
                    let slot = model.params.get_mut(id);
                    if slot.shape != tensor.shape {
                        problems.push(alloc::format!("{name} shape {:?} expected {:?}", tensor.shape, slot.shape));
                    } else {
                        slot.data = tensor.data;
                    }
                }
            }
        }
        for (id, name, _) in model.params.iter() {
            if !seen[id.0] {
                problems.push(alloc::format!("missing {name}"));
            }
        }
        if problems.is_empty() {
            Ok(model)
        } else {
            Err(ModelError::Layout(problems))
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn pool(&self) -> &ParameterPool {
        &self.pool
    }

    pub fn classifier(&self) -> [ParamId; 2] {
        [self.cls_w, self.cls_b]
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    /// Switches mode on the same weights.
    pub fn set_mode(&mut self, mode: Mode) -> Result<(), ModelError> {
        let mut config = self.config.clone();
        config.mode = mode;
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<(), ModelError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(ConfigError::Lambda(lambda).into());
        }
        self.config.lambda = lambda;
        Ok(())
    }

    /// Selection for a query value against `keys`, honouring the mode and
    /// whether this is a training pass.
    pub fn select_for(&self, q: &[f64], keys: &[&[f64]], language: Language, train: bool) -> Result<Selection, PoolError> {
        let k = self.config.pool.top_k;
        if train && self.config.mode == Mode::PoolMasked {
            select_masked(q, keys, self.config.assignment.allowed(language), k)
        } else {
            select(q, keys, k)
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        ids: &[usize],
        language: Language,
        train: bool,
        mut dropout: Option<&mut Dropout<'_>>,
    ) -> Result<ForwardOutput, ModelError> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(TensorError::OutOfRange {
                op: "token id",
                index: bad,
                bound: self.config.vocab_size,
            }
            .into());
        }
        let x_e = self.encoder.embed(g, ids)?;
        let (cls_w, cls_b) = (g.param(self.cls_w), g.param(self.cls_b));
        if self.config.mode == Mode::BackboneOnly {
            let h = self.encoder.encode(g, x_e, None, dropout.as_deref_mut())?;
            let cls = g.row(h, 0)?;
            let z = g.matmul(cls, cls_w)?;
            let logits = g.add(z, cls_b)?;
            return Ok(ForwardOutput {
                logits,
                query: None,
                phi: None,
                selection: None,
            });
        }
        let q = query(g, x_e, self.config.query_from)?;
        let key_vars: Vec<Var> = self.pool.keys().iter().map(|&id| g.param(id)).collect();
        let keys: Vec<&[f64]> = key_vars.iter().map(|&v| g.value(v)).collect();
        let selection = self.select_for(g.value(q), &keys, language, train)?;
        let x_p = self.pool.adapt(g, &selection, x_e)?;
        let h = self.encoder.encode(g, x_p, None, dropout.as_deref_mut())?;
        let prompt = g.rows(h, 0, selection.k() * self.config.pool.prompt_len)?;
        let pooled = g.mean_rows(prompt)?;
        let z = g.matmul(pooled, cls_w)?;
        let logits = g.add(z, cls_b)?;
        let phi = self.pool.surrogate(g, q, &selection)?;
        Ok(ForwardOutput {
            logits,
            query: Some(q),
            phi: Some(phi),
            selection: Some(selection),
        })
    }

    pub fn loss(&self, g: &mut Graph<'_>, out: &ForwardOutput, label: u8) -> Result<Var, ModelError> {
        Ok(objective(g, out.logits, label, out.phi, self.config.lambda)?)
    }

    fn read_prediction(g: &Graph<'_>, out: ForwardOutput) -> Prediction {
        let z = g.value(out.logits);
        Prediction::from_logits([z[0], z[1]], out.selection)
    }

    /// Inference-time prediction: unrestricted selection, no dropout.
    pub fn predict(&self, ids: &[usize], language: Language) -> Result<Prediction, ModelError> {
        let mut g = Graph::new(&self.params);
        let out = self.forward(&mut g, ids, language, false, None)?;
        Ok(Self::read_prediction(&g, out))
    }

    /// Predictions for many samples on one shared tape.
    pub fn predict_batch(&self, samples: &[EncodedSample]) -> Result<Vec<Prediction>, ModelError> {
        let mut g = Graph::new(&self.params);
        let mut outs = Vec::with_capacity(samples.len());
        for s in samples {
            outs.push(self.forward(&mut g, &s.ids, s.language, false, None)?);
        }
        Ok(outs.into_iter().map(|o| Self::read_prediction(&g, o)).collect())
    }

    /// The query vector and the unrestricted top-1 index for `ids`.
    pub fn query_and_selection(&self, ids: &[usize]) -> Result<(Vec<f64>, usize), ModelError> {
        let mut g = Graph::new(&self.params);
        let x_e = self.encoder.embed(&mut g, ids)?;
        let q = query(&mut g, x_e, self.config.query_from)?;
        let qv = g.value(q).to_vec();
        let keys = self.pool.key_values(&self.params);
        let sel = select(&qv, &keys, 1)?;
        Ok((qv, sel.i_star()))
    }

    /// Names of every parameter, in storage order.
    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|(_, n, _)| n.to_string()).collect()
    }
}
