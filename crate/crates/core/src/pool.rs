//! Prompt-matrix pool with learnable keys, key-query selection and
//! language-restricted selection.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::corpus::Language;
use crate::encoder::{normal_tensor, ConfigError, INIT_STD};
use crate::tensor::{cosine_similarity, Graph, ParamId, ParamStore, TensorError, Var};

/// Upper bound accepted for both the pool size and the prompt length.
pub const MAX_POOL_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoolError {
    #[error("query vector has zero norm")]
    ZeroQuery,
    #[error("key {0} has zero norm")]
    ZeroKey(usize),
    #[error("allowed index list is empty")]
    EmptyAllowed,
    #[error("index {index} outside pool of size {size}")]
    InvalidIndex { index: usize, size: usize },
    #[error("cannot select {k} of {available} candidates")]
    TopK { k: usize, available: usize },
    #[error("query dimension {query} differs from key dimension {key}")]
    Dimension { query: usize, key: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolConfig {
    /// Number of matrices S.
    pub size: usize,
    /// Rows per matrix L_p.
    pub prompt_len: usize,
    /// Matrices prepended per input K.
    pub top_k: usize,
    /// Matrices assigned to each language under masked selection.
    pub matrices_per_language: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            size: 7,
            prompt_len: 5,
            top_k: 1,
            matrices_per_language: 1,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, value) in [("pool_size", self.size), ("prompt_len", self.prompt_len)] {
            if !(1..=MAX_POOL_DIM).contains(&value) {
                return Err(ConfigError::OutOfRange {
                    field,
                    value,
                    min: 1,
                    max: MAX_POOL_DIM,
                });
            }
        }
        if self.top_k == 0 {
            return Err(ConfigError::TooSmall {
                field: "top_k",
                value: 0,
                min: 1,
            });
        }
        if self.top_k > self.size {
            return Err(ConfigError::TopK {
                top_k: self.top_k,
                pool_size: self.size,
            });
        }
        if self.matrices_per_language == 0 {
            return Err(ConfigError::TooSmall {
                field: "matrices_per_language",
                value: 0,
                min: 1,
            });
        }
        Ok(())
    }

    /// Number of prompt rows prepended to every input.
    pub fn prompt_rows(&self) -> usize {
        self.top_k * self.prompt_len
    }
}

/// Which pool indices each language may use under masked selection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageAssignment {
    lists: [Vec<usize>; Language::COUNT],
}

impl LanguageAssignment {
    /// Language `l` owns the block `[l*m, (l+1)*m)`.
    pub fn contiguous(m: usize) -> Self {
        let lists = core::array::from_fn(|l| (l * m..(l + 1) * m).collect());
        LanguageAssignment { lists }
    }

    /// Builds an assignment from explicit lists and checks it against a
    /// pool of `pool_size` matrices.
    pub fn from_lists(lists: [Vec<usize>; Language::COUNT], pool_size: usize) -> Result<Self, ConfigError> {
        let a = LanguageAssignment { lists };
        a.validate(pool_size)?;
        Ok(a)
    }

    pub fn validate(&self, pool_size: usize) -> Result<(), ConfigError> {
        let mut owner: Vec<Option<Language>> = alloc::vec![None; pool_size];
        for lang in Language::ALL {
            let list = self.allowed(lang);
            if list.is_empty() {
                return Err(ConfigError::Assignment(format!("{} has no indices", lang.tag())));
            }
            for &i in list {
                if i >= pool_size {
                    return Err(ConfigError::Assignment(format!(
                        "{} uses index {i} outside pool of size {pool_size}",
                        lang.tag()
                    )));
                }
                if let Some(other) = owner[i] {
                    return Err(ConfigError::Assignment(format!(
                        "index {i} shared by {} and {}",
                        other.tag(),
                        lang.tag()
                    )));
                }
                owner[i] = Some(lang);
            }
        }
        Ok(())
    }

    pub fn allowed(&self, lang: Language) -> &[usize] {
        &self.lists[lang.index()]
    }

    pub fn language_of(&self, index: usize) -> Option<Language> {
        Language::ALL.into_iter().find(|&l| self.allowed(l).contains(&index))
    }

    pub fn lists(&self) -> &[Vec<usize>; Language::COUNT] {
        &self.lists
    }
}

/// Chosen pool indices with their similarity scores, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

impl Selection {
    pub fn i_star(&self) -> usize {
        self.indices[0]
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

/// How the query vector is read off the embedding output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuerySource {
    /// Row 0, the `[CLS]` position.
    ClsEmbedding,
    /// Mean over all rows.
    #[default]
    MeanEmbedding,
}

impl QuerySource {
    pub fn as_str(self) -> &'static str {
        match self {
            QuerySource::ClsEmbedding => "embed_cls",
            QuerySource::MeanEmbedding => "embed_mean",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "embed_cls" | "cls" | "embed_output" => Some(QuerySource::ClsEmbedding),
            "embed_mean" | "mean" => Some(QuerySource::MeanEmbedding),
            _ => None,
        }
    }
}

/// Query vector `q(X)` from the embedding output `x_e`.
pub fn query(g: &mut Graph<'_>, x_e: Var, source: QuerySource) -> Result<Var, PoolError> {
    if g.shape(x_e).first().copied().unwrap_or(0) == 0 {
        return Err(TensorError::Empty { op: "query" }.into());
    }
    Ok(match source {
        QuerySource::ClsEmbedding => g.row(x_e, 0)?,
        QuerySource::MeanEmbedding => g.mean_rows(x_e)?,
    })
}

fn scores_for(q: &[f64], keys: &[&[f64]], candidates: &[usize]) -> Result<Vec<(usize, f64)>, PoolError> {
    if q.iter().all(|&x| x == 0.0) {
        return Err(PoolError::ZeroQuery);
    }
    candidates
        .iter()
        .map(|&i| {
            let key = keys.get(i).ok_or(PoolError::InvalidIndex { index: i, size: keys.len() })?;
            if key.len() != q.len() {
                return Err(PoolError::Dimension {
                    query: q.len(),
                    key: key.len(),
                });
            }
            match cosine_similarity(q, key) {
                Ok(s) => Ok((i, s)),
                Err(TensorError::ZeroVector { .. }) => Err(PoolError::ZeroKey(i)),
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}

fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Result<Selection, PoolError> {
    if k == 0 || k > scored.len() {
        return Err(PoolError::TopK {
            k,
            available: scored.len(),
        });
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(Selection {
        indices: scored.iter().map(|s| s.0).collect(),
        scores: scored.iter().map(|s| s.1).collect(),
    })
}

/// The `k` keys most similar to `q`, best first, ties to the lower index.
pub fn select(q: &[f64], keys: &[&[f64]], k: usize) -> Result<Selection, PoolError> {
    let all: Vec<usize> = (0..keys.len()).collect();
    top_k(scores_for(q, keys, &all)?, k)
}

/// As [`select`] but restricted to `allowed`.
pub fn select_masked(q: &[f64], keys: &[&[f64]], allowed: &[usize], k: usize) -> Result<Selection, PoolError> {
    if allowed.is_empty() {
        return Err(PoolError::EmptyAllowed);
    }
    let mut candidates = allowed.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    top_k(scores_for(q, keys, &candidates)?, k)
}

/// Handles to the prompt matrices `pool.P.{i}` and keys `pool.k.{i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPool {
    config: PoolConfig,
    d_model: usize,
    matrices: Vec<ParamId>,
    keys: Vec<ParamId>,
}

impl ParameterPool {
    pub fn init_random(store: &mut ParamStore, config: &PoolConfig, d_model: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut matrices = Vec::with_capacity(config.size);
        for i in 0..config.size {
            let t = normal_tensor(rng, alloc::vec![config.prompt_len, d_model], INIT_STD);
            matrices.push(store.insert(format!("pool.P.{i}"), t));
        }
        let mut keys = Vec::with_capacity(config.size);
        for i in 0..config.size {
            let t = normal_tensor(rng, alloc::vec![d_model], INIT_STD);
            keys.push(store.insert(format!("pool.k.{i}"), t));
        }
        ParameterPool {
            config: config.clone(),
            d_model,
            matrices,
            keys,
        }
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    pub fn size(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrix(&self, i: usize) -> ParamId {
        self.matrices[i]
    }

    pub fn key(&self, i: usize) -> ParamId {
        self.keys[i]
    }

    pub fn matrices(&self) -> &[ParamId] {
        &self.matrices
    }

    pub fn keys(&self) -> &[ParamId] {
        &self.keys
    }

    pub fn key_values<'s>(&self, store: &'s ParamStore) -> Vec<&'s [f64]> {
        self.keys.iter().map(|&id| store.get(id).data.as_slice()).collect()
    }

    /// Redraws any key whose norm underflowed to zero. Returns how many
    /// were replaced.
    pub fn repair_keys(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> usize {
        let mut fixed = 0;
        for &id in &self.keys {
            if store.get(id).data.iter().all(|&x| x == 0.0) {
                store.get_mut(id).data = normal_tensor(rng, alloc::vec![self.d_model], INIT_STD).data;
                fixed += 1;
            }
        }
        fixed
    }

    /// `X_p = concat(P_{i_1}, ..., P_{i_K}, X_e)` along rows.
    pub fn adapt(&self, g: &mut Graph<'_>, selection: &Selection, x_e: Var) -> Result<Var, PoolError> {
        let shape = g.shape(x_e);
        if shape.len() != 2 || shape[1] != self.d_model {
            return Err(TensorError::ShapeMismatch {
                op: "adapt",
                left: shape.to_vec(),
                right: alloc::vec![self.config.prompt_len, self.d_model],
            }
            .into());
        }
        let mut parts = Vec::with_capacity(selection.k() + 1);
        for &i in &selection.indices {
            let id = *self.matrices.get(i).ok_or(PoolError::InvalidIndex {
                index: i,
                size: self.size(),
            })?;
            parts.push(g.param(id));
        }
        parts.push(x_e);
        Ok(g.concat_rows(&parts)?)
    }

    /// Mean cosine similarity between `q` and the selected keys.
    pub fn surrogate(&self, g: &mut Graph<'_>, q: Var, selection: &Selection) -> Result<Var, PoolError> {
        let mut total = None;
        for &i in &selection.indices {
            let key = g.param(self.keys[i]);
            let c = g.cosine(q, key)?;
            total = Some(match total {
                None => c,
                Some(t) => g.add(t, c)?,
            });
        }
        let total = total.ok_or(PoolError::TopK { k: 0, available: 0 })?;
        Ok(g.scale(total, 1.0 / selection.k() as f64))
    }
}
