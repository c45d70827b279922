//! Run configuration: `key = value` files merged with command-line
//! overrides.

use std::fmt::Write as _;
use std::path::PathBuf;

use mulvuln_core::corpus::{Language, SplitRatios};
use mulvuln_core::encoder::EncoderConfig;
use mulvuln_core::model::{Mode, ModelConfig};
use mulvuln_core::optim::AdamConfig;
use mulvuln_core::pool::{LanguageAssignment, PoolConfig, QuerySource};
use mulvuln_core::train::TrainConfig;

/// Environment variable naming the directory relative paths resolve against.
pub const DATA_ROOT_ENV: &str = "MULVULN_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config key {key:?}: {message}")]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        ConfigError {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub vocab_specials: String,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub split: SplitRatios,
    pub encoder: EncoderConfig,
    pub pool: PoolConfig,
    pub mode: Mode,
    pub lambda: f64,
    pub query_from: QuerySource,
    /// Explicit assignment; contiguous blocks when `None`.
    pub assignment: Option<LanguageAssignment>,
    pub train: TrainConfig,
    pub tune_lambda: bool,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            vocab: None,
            vocab_specials: "default".into(),
            vocab_size: 4096,
            max_tokens: 512,
            split: SplitRatios::default(),
            encoder: EncoderConfig {
                n_layers: 1,
                n_heads: 2,
                d_model: 16,
                d_ffn: 32,
                max_positions: 576,
                dropout_rate: 0.0,
            },
            pool: PoolConfig::default(),
            mode: Mode::PoolMasked,
            lambda: 0.1,
            query_from: QuerySource::default(),
            assignment: None,
            train: TrainConfig::default(),
            tune_lambda: false,
            seed: 0,
            out: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| ConfigError::new(key, format!("cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(ConfigError::new(key, format!("expected true/false, got {other:?}"))),
    }
}

/// `C:0;CPP:1,2;...` with every language present.
pub fn parse_assignment(value: &str, pool_size: usize) -> Result<LanguageAssignment, ConfigError> {
    let key = "assignment";
    let mut lists: [Option<Vec<usize>>; Language::COUNT] = Default::default();
    for part in value.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (lang, idx) = part
            .split_once(':')
            .ok_or_else(|| ConfigError::new(key, format!("expected LANG:i,j in {part:?}")))?;
        let lang: Language = lang.parse().map_err(|e| ConfigError::new(key, format!("{e}")))?;
        let idx = idx
            .split(',')
            .map(|i| parse::<usize>(key, i))
            .collect::<Result<Vec<_>, _>>()?;
        if lists[lang.index()].replace(idx).is_some() {
            return Err(ConfigError::new(key, format!("{} listed twice", lang.tag())));
        }
    }
    let mut full: [Vec<usize>; Language::COUNT] = Default::default();
    for lang in Language::ALL {
        full[lang.index()] = lists[lang.index()]
            .take()
            .ok_or_else(|| ConfigError::new(key, format!("{} missing", lang.tag())))?;
    }
    LanguageAssignment::from_lists(full, pool_size).map_err(|e| ConfigError::new(key, e.to_string()))
}

pub fn format_assignment(a: &LanguageAssignment) -> String {
    Language::ALL
        .iter()
        .map(|&l| {
            let idx: Vec<String> = a.allowed(l).iter().map(usize::to_string).collect();
            format!("{}:{}", l.tag(), idx.join(","))
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn format_list(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Every recognized key, in snapshot order.
pub const KEYS: &[&str] = &[
    "corpus",
    "vocab",
    "vocab_specials",
    "vocab_size",
    "max_tokens",
    "split_train",
    "split_val",
    "split_test",
    "n_layers",
    "n_heads",
    "d_model",
    "d_ffn",
    "max_positions",
    "dropout",
    "pool_size",
    "prompt_len",
    "top_k",
    "matrices_per_language",
    "mode",
    "lambda",
    "query_from",
    "assignment",
    "epochs",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "clip_norm",
    "lambda_grid",
    "tune_lambda",
    "seed",
    "out",
];

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let opt_path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "corpus" => self.corpus = opt_path(v),
            "vocab" => self.vocab = opt_path(v),
            "vocab_specials" => match v {
                "default" | "roberta" => self.vocab_specials = v.to_string(),
                _ => return Err(ConfigError::new(key, "expected default or roberta")),
            },
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "max_tokens" => self.max_tokens = parse(key, v)?,
            "split_train" => self.split.train = parse(key, v)?,
            "split_val" => self.split.val = parse(key, v)?,
            "split_test" => self.split.test = parse(key, v)?,
            "n_layers" => self.encoder.n_layers = parse(key, v)?,
            "n_heads" => self.encoder.n_heads = parse(key, v)?,
            "d_model" => self.encoder.d_model = parse(key, v)?,
            "d_ffn" => self.encoder.d_ffn = parse(key, v)?,
            "max_positions" => self.encoder.max_positions = parse(key, v)?,
            "dropout" => self.encoder.dropout_rate = parse(key, v)?,
            "pool_size" => self.pool.size = parse(key, v)?,
            "prompt_len" => self.pool.prompt_len = parse(key, v)?,
            "top_k" => self.pool.top_k = parse(key, v)?,
            "matrices_per_language" => self.pool.matrices_per_language = parse(key, v)?,
            "mode" => {
                self.mode = Mode::parse(v)
                    .ok_or_else(|| ConfigError::new(key, "expected pool_query, pool_masked or backbone_only"))?
            }
            "lambda" => self.lambda = parse(key, v)?,
            "query_from" => {
                self.query_from = QuerySource::parse(v).ok_or_else(|| ConfigError::new(key, "expected embed_mean or embed_cls"))?
            }
            "assignment" => {
                self.assignment = if v.is_empty() || v == "contiguous" {
                    None
                } else {
                    Some(parse_assignment(v, self.pool.size)?)
                }
            }
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.adam.lr = parse(key, v)?,
            "beta1" => self.train.adam.beta1 = parse(key, v)?,
            "beta2" => self.train.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.train.adam.eps = parse(key, v)?,
            "clip_norm" => {
                self.train.clip_norm = if v.is_empty() || v == "none" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "lambda_grid" => {
                self.train.lambda_grid = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            "tune_lambda" => self.tune_lambda = parse_bool(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = opt_path(v),
            _ => return Err(ConfigError::new(key, "unknown key")),
        }
        Ok(())
    }

    /// Parses a config file body. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(line, format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        Some(match key {
            "corpus" => path(&self.corpus),
            "vocab" => path(&self.vocab),
            "vocab_specials" => self.vocab_specials.clone(),
            "vocab_size" => self.vocab_size.to_string(),
            "max_tokens" => self.max_tokens.to_string(),
            "split_train" => self.split.train.to_string(),
            "split_val" => self.split.val.to_string(),
            "split_test" => self.split.test.to_string(),
            "n_layers" => self.encoder.n_layers.to_string(),
            "n_heads" => self.encoder.n_heads.to_string(),
            "d_model" => self.encoder.d_model.to_string(),
            "d_ffn" => self.encoder.d_ffn.to_string(),
            "max_positions" => self.encoder.max_positions.to_string(),
            "dropout" => self.encoder.dropout_rate.to_string(),
            "pool_size" => self.pool.size.to_string(),
            "prompt_len" => self.pool.prompt_len.to_string(),
            "top_k" => self.pool.top_k.to_string(),
            "matrices_per_language" => self.pool.matrices_per_language.to_string(),
            "mode" => self.mode.as_str().to_string(),
            "lambda" => self.lambda.to_string(),
            "query_from" => self.query_from.as_str().to_string(),
            "assignment" => self.assignment.as_ref().map_or_else(|| "contiguous".into(), format_assignment),
            "epochs" => self.train.epochs.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "lr" => self.train.adam.lr.to_string(),
            "beta1" => self.train.adam.beta1.to_string(),
            "beta2" => self.train.adam.beta2.to_string(),
            "adam_eps" => self.train.adam.eps.to_string(),
            "clip_norm" => self.train.clip_norm.map_or_else(|| "none".into(), |c| c.to_string()),
            "lambda_grid" => format_list(&self.train.lambda_grid),
            "tune_lambda" => self.tune_lambda.to_string(),
            "seed" => self.seed.to_string(),
            "out" => path(&self.out),
            _ => return None,
        })
    }

    /// Full snapshot in `key = value` form, one key per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            writeln!(s, "{key} = {}", self.get(key).expect("known key")).expect("string write");
        }
        s
    }

    pub fn assignment(&self) -> LanguageAssignment {
        self.assignment
            .clone()
            .unwrap_or_else(|| LanguageAssignment::contiguous(self.pool.matrices_per_language))
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            vocab_size,
            pool: self.pool.clone(),
            mode: self.mode,
            lambda: self.lambda,
            query_from: self.query_from,
            assignment: self.assignment(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        self.train.adam
    }

    /// Cross-field checks, run before any work starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let sum = self.split.train + self.split.val + self.split.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ConfigError::new("split_train", format!("split ratios sum to {sum}, not 1")));
        }
        if self.max_tokens < 2 {
            return Err(ConfigError::new("max_tokens", "must be at least 2"));
        }
        if self.vocab_size < 8 {
            return Err(ConfigError::new("vocab_size", "must be at least 8"));
        }
        self.pool
            .validate()
            .map_err(|e| ConfigError::new(config_field(&e), e.to_string()))?;
        self.model_config(self.vocab_size)
            .validate()
            .map_err(|e| ConfigError::new(config_field(&e), e.to_string()))?;
        let need = self.max_tokens.max(512) + self.pool.prompt_rows();
        if self.encoder.max_positions < need {
            return Err(ConfigError::new(
                "max_positions",
                format!("{} < {need} (max_tokens + top_k * prompt_len)", self.encoder.max_positions),
            ));
        }
        self.train_config()
            .validate()
            .map_err(|e| ConfigError::new("train", e.to_string()))?;
        Ok(())
    }
}

fn config_field(e: &mulvuln_core::encoder::ConfigError) -> &'static str {
    use mulvuln_core::encoder::ConfigError as E;
    match e {
        E::HeadSplit { .. } => "n_heads",
        E::TooSmall { field, .. } | E::OutOfRange { field, .. } => field,
        E::Dropout(_) => "dropout",
        E::Lambda(_) => "lambda",
        E::TopK { .. } => "top_k",
        E::Assignment(_) => "assignment",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn snapshot_round_trip() {
        let mut c = RunConfig::default();
        c.set("lambda", "0.03").unwrap();
        c.set("mode", "pool_query").unwrap();
        c.set("corpus", "data/x.jsonl").unwrap();
        c.set("clip_norm", "1.0").unwrap();
        c.set("assignment", "C:6;CPP:5;CSHARP:4;GO:3;JAVA:2;JAVASCRIPT:1;PYTHON:0").unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn comments_and_unknown_keys() {
        let c = RunConfig::from_text("# note\n\nseed = 9\n  lr=0.001 \n").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.train.adam.lr, 0.001);
        let e = RunConfig::from_text("colour = blue\n").unwrap_err();
        assert_eq!(e.key, "colour");
        assert!(RunConfig::from_text("seed\n").is_err());
    }

    #[test]
    fn bounds_enforced() {
        for (k, v, field) in [
            ("prompt_len", "65", "prompt_len"),
            ("prompt_len", "0", "prompt_len"),
            ("pool_size", "65", "pool_size"),
            ("top_k", "8", "top_k"),
        ] {
            let mut c = RunConfig::default();
            c.set("mode", "pool_query").unwrap();
            c.set(k, v).unwrap();
            c.set("max_positions", "2000").unwrap();
            assert_eq!(c.validate().unwrap_err().key, field, "{k}={v}");
        }
        let mut c = RunConfig::default();
        c.set("prompt_len", "30").unwrap();
        c.set("max_positions", "540").unwrap();
        assert_eq!(c.validate().unwrap_err().key, "max_positions");
        let mut c = RunConfig::default();
        c.set("split_train", "0.7").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn assignment_parsing() {
        let a = parse_assignment("C:0,1;CPP:2,3;CSHARP:4,5;GO:6,7;JAVA:8,9;JAVASCRIPT:10,11;PYTHON:12,13", 14).unwrap();
        assert_eq!(a, LanguageAssignment::contiguous(2));
        assert_eq!(format_assignment(&a), "C:0,1;CPP:2,3;CSHARP:4,5;GO:6,7;JAVA:8,9;JAVASCRIPT:10,11;PYTHON:12,13");
        assert!(parse_assignment("C:0", 7).is_err());
        assert!(parse_assignment("C:0;CPP:0;CSHARP:2;GO:3;JAVA:4;JAVASCRIPT:5;PYTHON:6", 7).is_err());
    }
}
