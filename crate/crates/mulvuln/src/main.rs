use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mulvuln::config::RunConfig;
use mulvuln::error::CliError;
use mulvuln::run;

#[derive(Parser)]
#[command(name = "mulvuln", about = "Multilingual vulnerability detection with a language-specific parameter pool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// pool_query, pool_masked or backbone_only.
    #[arg(long)]
    mode: Option<String>,
    /// Prompt length L_p.
    #[arg(long)]
    lp: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    topk: Option<usize>,
    /// Any other config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Strip comments, drop over-length samples, split, build the vocabulary.
    Preprocess(Common),
    /// Build a vocabulary from the training split.
    BuildVocab(Common),
    /// Write a synthetic seven-language corpus.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Samples per language.
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Train and write a run directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the newest epoch checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Score best.ckpt of a run directory on the test split.
    Eval(Common),
    /// Train one model per value of an ablation axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// lambda, lp, topk, mpl or mode.
        #[arg(long)]
        axis: String,
    },
    /// Write query and key vectors of a trained run.
    ExportEmbeddings(Common),
    /// Render the tables stored in a run or sweep directory.
    Report(Common),
}

/// Default < config file (or the run's snapshot) < flags.
fn resolve(common: &Common, run_dir: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    let file = match (&common.config, run_dir) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(dir)) if dir.join(run::CONFIG_FILE).is_file() => Some(dir.join(run::CONFIG_FILE)),
        _ => None,
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = &common.mode {
        cfg.set("mode", m)?;
    }
    if let Some(lp) = common.lp {
        cfg.pool.prompt_len = lp;
    }
    if let Some(l) = common.lambda {
        cfg.lambda = l;
    }
    if let Some(k) = common.topk {
        cfg.pool.top_k = k;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.out
        .clone()
        .ok_or_else(|| CliError::Usage("missing required key `out` (use --out DIR)".into()))
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { common, n } => {
            let cfg = resolve(&common, None)?;
            let path = run::synth(n, cfg.seed, &out_dir(&cfg)?)?;
            println!("wrote {}", path.display());
        }
        Command::Preprocess(common) => {
            let cfg = resolve(&common, None)?;
            cfg.validate()?;
            let s = run::preprocess(&cfg, &out_dir(&cfg)?)?;
            print!("{}", s.stats_table);
            println!("kept {} dropped {} unterminated-comment warnings {}", s.kept, s.dropped, s.unterminated);
        }
        Command::BuildVocab(common) => {
            let cfg = resolve(&common, None)?;
            let v = run::build_vocab(&cfg, &out_dir(&cfg)?)?;
            println!("vocabulary size {} sha256 {}", v.size(), mulvuln::vocab_file::vocab_hash(&v));
        }
        Command::Train { common, resume } => {
            let dir = common.out.clone();
            let cfg = resolve(&common, if resume { dir.as_deref() } else { None })?;
            let s = run::train_run(&cfg, &out_dir(&cfg)?, resume)?;
            println!("lambda {} best epoch {} val F1 {:.4}", s.lambda, s.best_epoch, s.best_val_f1);
            print!("{}", s.report);
        }
        Command::Eval(common) => {
            let cfg = resolve(&common, common.out.as_deref())?;
            print!("{}", run::eval_run(&cfg, &out_dir(&cfg)?)?);
        }
        Command::Sweep { common, axis } => {
            let cfg = resolve(&common, None)?;
            print!("{}", run::sweep_run(&cfg, &axis, &out_dir(&cfg)?)?);
        }
        Command::ExportEmbeddings(common) => {
            let cfg = resolve(&common, common.out.as_deref())?;
            let dir = out_dir(&cfg)?;
            let agreement = run::export_run(&cfg, &dir)?;
            println!("wrote {}", dir.join(run::EMBEDDINGS_FILE).display());
            if let Some(a) = agreement {
                println!("own-language selection {:.2}%", 100.0 * a);
            }
        }
        Command::Report(common) => {
            let cfg = resolve(&common, None)?;
            print!("{}", run::report_run(&out_dir(&cfg)?)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
