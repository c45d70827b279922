//! Subcommand implementations and the run-directory layout.
//!
//! A run directory holds `config.txt`, `vocab.txt`, `history.jsonl`,
//! `epoch_{n}.ckpt`, `best.ckpt`, `metrics.jsonl` and `metrics.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use mulvuln_core::corpus::{
    filter_by_length, generate_synthetic, split_dataset, stats, strip_comments, CodeSample, DatasetSplit,
};
use mulvuln_core::eval::{breakdown, evaluate, export_embeddings, GroupBy};
use mulvuln_core::model::{EncodedSample, ModelConfig, MulVulnModel};
use mulvuln_core::tokenizer::{SpecialTokens, Vocabulary, CLS, EOS, PAD, UNK};
use mulvuln_core::train::{finish, run_epochs, sweep, SweepAxis, TrainConfig, TrainOutcome, TrainState};

use crate::checkpoint::{check_config, Checkpoint, MODEL_KEYS, STRUCTURAL_KEYS};
use crate::config::{RunConfig, DATA_ROOT_ENV};
use crate::error::CliError;
use crate::export::write_export;
use crate::records::{load_records, write_records};
use crate::report::{self, Record};
use crate::serial::EpochJson;
use crate::vocab_file::{load_external_vocab, load_vocab, save_vocab, vocab_hash};

pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const BEST_CKPT: &str = "best.ckpt";
pub const METRICS_JSONL: &str = "metrics.jsonl";
pub const METRICS_TXT: &str = "metrics.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const REPORT_TXT: &str = "report.txt";

pub fn epoch_ckpt(n: usize) -> String {
    format!("epoch_{n}.ckpt")
}

/// Relative input paths resolve against the data root when it is set.
pub fn resolve_data(path: &Path) -> PathBuf {
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::data(path.display(), e)
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io(path, e))
}

fn require<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing required config key `{key}`")))
}

fn specials(cfg: &RunConfig) -> SpecialTokens {
    if cfg.vocab_specials == "roberta" {
        SpecialTokens::roberta()
    } else {
        SpecialTokens::default()
    }
}

/// Snapshot written into output directories; the output path itself is
/// left out so two directories from the same config compare equal.
pub fn snapshot(cfg: &RunConfig) -> String {
    RunConfig { out: None, ..cfg.clone() }.to_text()
}

fn load_configured_vocab(cfg: &RunConfig, path: &Path) -> Result<Vocabulary, CliError> {
    let path = resolve_data(path);
    let default_plain = cfg.vocab_specials == "default" && path.extension().is_none_or(|e| e != "json");
    Ok(if default_plain {
        load_vocab(&path)?
    } else {
        load_external_vocab(&path, &specials(cfg))?
    })
}

fn load_run_vocab(cfg: &RunConfig, dir: &Path) -> Result<Vocabulary, CliError> {
    Ok(load_external_vocab(&dir.join(VOCAB_FILE), &specials(cfg))?)
}

fn load_split(cfg: &RunConfig) -> Result<DatasetSplit, CliError> {
    let corpus = require(&cfg.corpus, "corpus")?;
    let samples = load_records(&resolve_data(corpus))?;
    Ok(split_dataset(samples, cfg.split, cfg.seed)?)
}

/// Tokenized splits plus the raw samples they came from.
pub struct Data {
    pub vocab: Vocabulary,
    pub vocab_hash: String,
    pub split: DatasetSplit,
    pub train: Vec<EncodedSample>,
    pub val: Vec<EncodedSample>,
    pub test: Vec<EncodedSample>,
}

impl Data {
    fn new(split: DatasetSplit, vocab: Vocabulary, max_tokens: usize) -> Self {
        let enc = |s: &[CodeSample]| EncodedSample::encode_all(s, &vocab, max_tokens);
        Data {
            train: enc(&split.train),
            val: enc(&split.val),
            test: enc(&split.test),
            vocab_hash: vocab_hash(&vocab),
            vocab,
            split,
        }
    }
}

/// Corpus from the config; the vocabulary is the configured file or one
/// built from the training split.
pub fn load_data(cfg: &RunConfig) -> Result<Data, CliError> {
    let split = load_split(cfg)?;
    let vocab = match &cfg.vocab {
        Some(p) => load_configured_vocab(cfg, p)?,
        None => Vocabulary::build(&split.train, cfg.vocab_size)?,
    };
    Ok(Data::new(split, vocab, cfg.max_tokens))
}

fn load_data_with_vocab(cfg: &RunConfig, vocab: Vocabulary) -> Result<Data, CliError> {
    Ok(Data::new(load_split(cfg)?, vocab, cfg.max_tokens))
}

pub fn synth(n: usize, seed: u64, out: &Path) -> Result<PathBuf, CliError> {
    create_dir(out)?;
    let path = out.join("corpus.jsonl");
    write_records(&path, &generate_synthetic(n, 0.5, seed))?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessSummary {
    pub kept: usize,
    pub dropped: usize,
    pub unterminated: usize,
    pub stats_table: String,
}

/// Strip comments, drop over-length samples, split, and build the vocabulary
/// from the training part. Writes `corpus.jsonl` (split-tagged),
/// `dropped.jsonl`, `warnings.txt`, `stats.txt`, `vocab.txt`, `config.txt`.
pub fn preprocess(cfg: &RunConfig, out: &Path) -> Result<PreprocessSummary, CliError> {
    let corpus = require(&cfg.corpus, "corpus")?;
    let samples = load_records(&resolve_data(corpus))?;
    let mut warnings = String::new();
    let mut unterminated = 0;
    let stripped: Vec<CodeSample> = samples
        .into_iter()
        .map(|mut s| {
            let r = strip_comments(&s.code, s.language);
            if r.unterminated_block {
                unterminated += 1;
                warnings.push_str(&format!("{}: unterminated block comment\n", s.id));
            }
            s.code = r.code;
            s
        })
        .collect();
    let length_vocab = match &cfg.vocab {
        Some(p) => load_configured_vocab(cfg, p)?,
        // the framed length does not depend on the vocabulary contents
        None => Vocabulary::from_tokens(
            [CLS, EOS, PAD, UNK].iter().map(|t| t.to_string()).collect(),
            &SpecialTokens::default(),
        )?,
    };
    let (kept, dropped) = filter_by_length(stripped, &length_vocab, cfg.max_tokens);
    let split = split_dataset(kept, cfg.split, cfg.seed)?;
    let vocab = match &cfg.vocab {
        Some(_) => length_vocab,
        None => Vocabulary::build(&split.train, cfg.vocab_size)?,
    };
    let st = stats(&split);
    let summary = PreprocessSummary {
        kept: split.len(),
        dropped: dropped.len(),
        unterminated,
        stats_table: report::stats_table(&st),
    };

    create_dir(out)?;
    write_records(&out.join("corpus.jsonl"), &split.into_tagged())?;
    write_records(&out.join("dropped.jsonl"), &dropped)?;
    write(&out.join("warnings.txt"), &warnings)?;
    write(&out.join("stats.txt"), &summary.stats_table)?;
    save_vocab(&out.join(VOCAB_FILE), &vocab)?;
    write(&out.join(CONFIG_FILE), snapshot(cfg))?;
    Ok(summary)
}

pub fn build_vocab(cfg: &RunConfig, out: &Path) -> Result<Vocabulary, CliError> {
    let split = load_split(cfg)?;
    let vocab = Vocabulary::build(&split.train, cfg.vocab_size)?;
    create_dir(out)?;
    save_vocab(&out.join(VOCAB_FILE), &vocab)?;
    Ok(vocab)
}

fn latest_epoch_ckpt(dir: &Path) -> Option<(usize, PathBuf)> {
    let entries = fs::read_dir(dir).ok()?;
    entries
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            let n = name.strip_prefix("epoch_")?.strip_suffix(".ckpt")?.parse().ok()?;
            Some((n, dir.join(name)))
        })
        .max_by_key(|(n, _)| *n)
}

fn write_history(dir: &Path, state: &TrainState) -> Result<(), String> {
    let mut text = String::new();
    for r in &state.history.epochs {
        text.push_str(&serde_json::to_string(&EpochJson::from(r)).map_err(|e| e.to_string())?);
        text.push('\n');
    }
    fs::write(dir.join(HISTORY_FILE), text).map_err(|e| e.to_string())
}

/// Trains into `dir`, writing a checkpoint and the history after every
/// epoch. With `resume`, continues from the newest epoch checkpoint.
pub fn train_in_dir(
    dir: &Path,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    data: &Data,
    resume: bool,
) -> Result<TrainOutcome, CliError> {
    create_dir(dir)?;
    let mut state = match latest_epoch_ckpt(dir).filter(|_| resume) {
        Some((_, path)) => {
            let ck = Checkpoint::load(&path)?;
            check_config(ck.model.config(), model_config, MODEL_KEYS)?;
            ck.check_tokenizer(&data.vocab_hash)?;
            ck.into_state()?
        }
        None => TrainState::new(MulVulnModel::new(model_config.clone(), train_config.seed)?),
    };
    let hash = data.vocab_hash.clone();
    let mut observer = |s: &TrainState| -> Result<(), String> {
        Checkpoint::from_state(s, &hash)
            .save(&dir.join(epoch_ckpt(s.epochs_done)))
            .map_err(|e| e.to_string())?;
        if let Some(best) = &s.best {
            Checkpoint::from_best(best, &hash)
                .save(&dir.join(BEST_CKPT))
                .map_err(|e| e.to_string())?;
        }
        write_history(dir, s)
    };
    run_epochs(&mut state, &data.train, &data.val, train_config, &mut observer)?;
    Ok(finish(state)?)
}

/// Test-set records: overall, per language, per CWE.
pub fn evaluation_records(model: &MulVulnModel, data: &Data) -> Result<Vec<Record>, CliError> {
    let ev = evaluate(model, &data.test)?;
    let preds = ev.labels();
    let gold: Vec<u8> = data.test.iter().map(|s| s.label).collect();
    let mut records = vec![report::overall_record(
        &format!("MULVULN w/ {}", model.mode().as_str()),
        &ev.report,
    )];
    for by in [GroupBy::Language, GroupBy::Cwe] {
        let b = breakdown(&preds, &gold, &data.split.test, by).map_err(|e| CliError::data("breakdown", e))?;
        records.extend(report::breakdown_records(&b));
    }
    Ok(records)
}

fn write_metrics(dir: &Path, records: &[Record]) -> Result<String, CliError> {
    let path = dir.join(METRICS_JSONL);
    report::write_records(&path, records).map_err(|e| io(&path, e))?;
    let text = report::render(records);
    write(&dir.join(METRICS_TXT), &text)?;
    Ok(text)
}

#[derive(Debug)]
pub struct TrainSummary {
    pub lambda: f64,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub report: String,
}

/// The `train` subcommand.
pub fn train_run(cfg: &RunConfig, out: &Path, resume: bool) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), snapshot(cfg))?;
    save_vocab(&out.join(VOCAB_FILE), &data.vocab)?;
    let base = cfg.model_config(data.vocab.size());
    let tc = cfg.train_config();

    let (lambda, outcome) = if cfg.tune_lambda {
        let mut best: Option<(f64, TrainOutcome)> = None;
        let mut lines = String::new();
        for &lambda in &tc.lambda_grid {
            let dir = out.join(format!("lambda_{lambda}"));
            let o = train_in_dir(&dir, &ModelConfig { lambda, ..base.clone() }, &tc, &data, resume)?;
            lines.push_str(&format!(
                "{{\"lambda\":{lambda},\"best_epoch\":{},\"best_val_f1\":{}}}\n",
                o.best.epoch, o.best.val_f1
            ));
            if best.as_ref().is_none_or(|(_, b)| o.best.val_f1 > b.best.val_f1) {
                best = Some((lambda, o));
            }
        }
        write(&out.join("lambda.jsonl"), lines)?;
        let (lambda, o) = best.ok_or_else(|| CliError::Usage("empty lambda_grid".into()))?;
        Checkpoint::from_best(&o.best, &data.vocab_hash).save(&out.join(BEST_CKPT))?;
        (lambda, o)
    } else {
        (cfg.lambda, train_in_dir(out, &base, &tc, &data, resume)?)
    };

    let records = evaluation_records(&outcome.best.model, &data)?;
    let report = write_metrics(out, &records)?;
    Ok(TrainSummary {
        lambda,
        best_epoch: outcome.best.epoch,
        best_val_f1: outcome.best.val_f1,
        report,
    })
}

fn load_best(cfg: &RunConfig, dir: &Path) -> Result<(MulVulnModel, Data), CliError> {
    let vocab = load_run_vocab(cfg, dir)?;
    let ck = Checkpoint::load(&dir.join(BEST_CKPT))?;
    let data = load_data_with_vocab(cfg, vocab)?;
    ck.check_tokenizer(&data.vocab_hash)?;
    check_config(ck.model.config(), &cfg.model_config(data.vocab.size()), STRUCTURAL_KEYS)?;
    Ok((ck.model, data))
}

/// The `eval` subcommand: scores `best.ckpt` on the test split.
pub fn eval_run(cfg: &RunConfig, dir: &Path) -> Result<String, CliError> {
    let (model, data) = load_best(cfg, dir)?;
    let records = evaluation_records(&model, &data)?;
    write_metrics(dir, &records)
}

/// The `export-embeddings` subcommand. Returns the fraction of test queries
/// selecting a matrix of their own language.
pub fn export_run(cfg: &RunConfig, dir: &Path) -> Result<Option<f64>, CliError> {
    let (model, data) = load_best(cfg, dir)?;
    let export = export_embeddings(&model, &data.test)?;
    let path = dir.join(EMBEDDINGS_FILE);
    write_export(&path, &export).map_err(|e| io(&path, e))?;
    Ok(export.selection_agreement(&model.config().assignment))
}

pub fn sweep_file(axis: &str) -> String {
    format!("sweep_{axis}.jsonl")
}

/// The `sweep` subcommand.
pub fn sweep_run(cfg: &RunConfig, axis: &str, out: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    let axis = SweepAxis::default_for(axis).ok_or_else(|| {
        CliError::Usage(format!("unknown sweep axis `{axis}` (lambda, lp, topk, mpl, mode)"))
    })?;
    let data = load_data(cfg)?;
    let base = cfg.model_config(data.vocab.size());
    let rows = sweep(&base, &axis, &data.train, &data.val, &data.test, &cfg.train_config())?;
    let records = report::sweep_records(&axis, base.mode, &rows);
    create_dir(out)?;
    write(&out.join(CONFIG_FILE), snapshot(cfg))?;
    save_vocab(&out.join(VOCAB_FILE), &data.vocab)?;
    let path = out.join(sweep_file(axis.name()));
    report::write_records(&path, &records).map_err(|e| io(&path, e))?;
    let text = report::render(&records);
    write(&out.join(format!("sweep_{}.txt", axis.name())), &text)?;
    Ok(text)
}

/// The `report` subcommand: renders every record file in `dir`.
pub fn report_run(dir: &Path) -> Result<String, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| {
                n == METRICS_JSONL || (n.starts_with("sweep_") && n.ends_with(".jsonl"))
            })
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("{}: no report records found", dir.display())));
    }
    let mut text = String::new();
    for f in files {
        let records = report::read_records(&f).map_err(|e| io(&f, e))?;
        text.push_str(&format!("# {}\n", f.file_name().and_then(|n| n.to_str()).unwrap_or_default()));
        text.push_str(&report::render(&records));
    }
    write(&dir.join(REPORT_TXT), &text)?;
    Ok(text)
}
