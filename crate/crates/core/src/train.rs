//! Mini-batch training with validation-based model selection, plus
//! ablation sweeps over pool settings.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::Dropout;
use crate::eval::{evaluate, MetricsReport};
use crate::model::{EncodedSample, Mode, ModelConfig, ModelError, MulVulnModel};
use crate::optim::{adam_step, AdamConfig, OptimizerState};
use crate::pool::LanguageAssignment;
use crate::tensor::{Gradients, Graph};

/// Default λ values tried by [`tune_lambda`].
pub const LAMBDA_GRID: [f64; 4] = [1e-1, 3e-1, 1e-2, 3e-2];
/// Default prompt lengths for the L_p sweep.
pub const PROMPT_LEN_GRID: [usize; 5] = [1, 3, 5, 7, 9];

const STREAM_SHUFFLE: u64 = 0;
const STREAM_DROPOUT: u64 = 1;
const STREAM_REPAIR: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Global gradient-norm clip, off when `None`.
    pub clip_norm: Option<f64>,
    pub lambda_grid: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            clip_norm: None,
            lambda_grid: LAMBDA_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrain,
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}, sample {sample_id}")]
    NonFinite {
        epoch: usize,
        step: u64,
        sample_id: String,
        loss: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("epoch observer failed: {0}")]
    Observer(String),
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if !(self.adam.eps > 0.0) {
            return bad("eps must be positive");
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("lambda grid values must be finite and non-negative");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad("clip_norm must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean objective over the epoch's samples.
    pub train_loss: f64,
    /// Mean cross-entropy part of the objective.
    pub train_ce: f64,
    pub val: MetricsReport,
    /// `selection_counts[language][index]` over training-time selections.
    pub selection_counts: Vec<Vec<usize>>,
    /// Per parameter, whether any batch produced a nonzero gradient.
    pub touched: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    /// Mean objective over the training set before the first update.
    pub initial_loss: f64,
    pub initial_ce: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.train_loss)
    }

    pub fn final_ce(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.train_ce)
    }

    /// Epoch with the highest validation F1, ties to the earlier epoch.
    pub fn best_epoch(&self) -> Option<usize> {
        let mut best: Option<&EpochRecord> = None;
        for r in &self.epochs {
            if best.is_none_or(|b| r.val.f1 > b.val.f1) {
                best = Some(r);
            }
        }
        best.map(|r| r.epoch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestModel {
    pub epoch: usize,
    pub val_f1: f64,
    pub model: MulVulnModel,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: MulVulnModel,
    pub optimizer: OptimizerState,
    pub epochs_done: usize,
    pub history: TrainHistory,
    pub best: Option<BestModel>,
}

impl TrainState {
    pub fn new(model: MulVulnModel) -> Self {
        let optimizer = OptimizerState::new(model.params());
        TrainState {
            model,
            optimizer,
            epochs_done: 0,
            history: TrainHistory::default(),
            best: None,
        }
    }
}

/// Called after every completed epoch.
pub trait EpochObserver {
    fn on_epoch(&mut self, state: &TrainState) -> Result<(), String>;
}

impl EpochObserver for () {
    fn on_epoch(&mut self, _: &TrainState) -> Result<(), String> {
        Ok(())
    }
}

impl<F: FnMut(&TrainState) -> Result<(), String>> EpochObserver for F {
    fn on_epoch(&mut self, state: &TrainState) -> Result<(), String> {
        self(state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: BestModel,
    pub last: MulVulnModel,
    pub history: TrainHistory,
}

fn stream_rng(seed: u64, stream: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 32) | epoch as u64);
    rng
}

/// Visiting order of the training set in `epoch` (1-based).
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, STREAM_SHUFFLE, epoch);
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order
}

/// Mean objective and cross-entropy of `model` over `samples` with
/// training-time selection and no updates.
pub fn mean_loss(model: &MulVulnModel, samples: &[EncodedSample]) -> Result<(f64, f64), ModelError> {
    let (mut total, mut ce_total) = (0.0, 0.0);
    for s in samples {
        let mut g = Graph::new(model.params());
        let out = model.forward(&mut g, &s.ids, s.language, true, None)?;
        let loss = model.loss(&mut g, &out, s.label)?;
        let ce = g.cross_entropy(out.logits, usize::from(s.label))?;
        total += g.scalar(loss);
        ce_total += g.scalar(ce);
    }
    let n = samples.len().max(1) as f64;
    Ok((total / n, ce_total / n))
}

/// Runs epochs `state.epochs_done + 1 ..= config.epochs`.
pub fn run_epochs(
    state: &mut TrainState,
    train: &[EncodedSample],
    val: &[EncodedSample],
    config: &TrainConfig,
    observer: &mut dyn EpochObserver,
) -> Result<(), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    if state.epochs_done == 0 && state.history.epochs.is_empty() {
        let (loss, ce) = mean_loss(&state.model, train)?;
        state.history.initial_loss = loss;
        state.history.initial_ce = ce;
    }
    let pool_size = state.model.pool().size();
    let dropout_rate = state.model.config().encoder.dropout_rate;
    let mut grads = Gradients::new();
    while state.epochs_done < config.epochs {
        let epoch = state.epochs_done + 1;
        let order = epoch_order(train.len(), config.seed, epoch);
        let mut dropout_rng = stream_rng(config.seed, STREAM_DROPOUT, epoch);
        let mut repair_rng = stream_rng(config.seed, STREAM_REPAIR, epoch);
        let mut counts = vec![vec![0usize; pool_size]; crate::corpus::Language::COUNT];
        let mut touched = vec![false; state.model.params().len()];
        let (mut loss_sum, mut ce_sum) = (0.0, 0.0);

        for batch in order.chunks(config.batch_size) {
            grads.clear();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &train[i];
                let model = &state.model;
                let mut g = Graph::new(model.params());
                let mut dropout = Dropout {
                    rate: dropout_rate,
                    rng: &mut dropout_rng,
                };
                let out = model.forward(&mut g, &s.ids, s.language, true, Some(&mut dropout))?;
                let loss = model.loss(&mut g, &out, s.label)?;
                let ce = g.cross_entropy(out.logits, usize::from(s.label)).map_err(ModelError::from)?;
                let value = g.scalar(loss);
                if !value.is_finite() {
                    return Err(TrainError::NonFinite {
                        epoch,
                        step: state.optimizer.step,
                        sample_id: s.id.clone(),
                        loss: value,
                    });
                }
                loss_sum += value;
                ce_sum += g.scalar(ce);
                if let Some(sel) = &out.selection {
                    for &k in &sel.indices {
                        counts[s.language.index()][k] += 1;
                    }
                }
                let scaled = g.scale(loss, scale);
                g.backward_into(scaled, &mut grads).map_err(ModelError::from)?;
            }
            if let Some(max) = config.clip_norm {
                let norm = grads.norm();
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            for (id, g) in grads.iter() {
                if g.iter().any(|&x| x != 0.0) {
                    touched[id.0] = true;
                }
            }
            let params = state.model.params_mut();
            params.zero_grad();
            params.accumulate(&grads);
            adam_step(params, &mut state.optimizer, &config.adam);
            params.zero_grad();
            let pool = state.model.pool().clone();
            pool.repair_keys(state.model.params_mut(), &mut repair_rng);
        }

        let val_report = if val.is_empty() {
            MetricsReport::default()
        } else {
            evaluate(&state.model, val)?.report
        };
        let n = train.len() as f64;
        state.history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_ce: ce_sum / n,
            val: val_report,
            selection_counts: counts,
            touched,
        });
        let improves = match &state.best {
            None => true,
            Some(_) if val.is_empty() => true,
            Some(b) => val_report.f1 > b.val_f1,
        };
        if improves {
            state.best = Some(BestModel {
                epoch,
                val_f1: val_report.f1,
                model: state.model.clone(),
            });
        }
        state.epochs_done = epoch;
        observer.on_epoch(state).map_err(TrainError::Observer)?;
    }
    Ok(())
}

/// Trains a freshly initialized model and returns the best checkpoint by
/// validation F1 (the last epoch when `val` is empty).
pub fn train(
    model: MulVulnModel,
    train: &[EncodedSample],
    val: &[EncodedSample],
    config: &TrainConfig,
    observer: &mut dyn EpochObserver,
) -> Result<TrainOutcome, TrainError> {
    let mut state = TrainState::new(model);
    run_epochs(&mut state, train, val, config, observer)?;
    finish(state)
}

pub fn finish(state: TrainState) -> Result<TrainOutcome, TrainError> {
    let best = state
        .best
        .ok_or_else(|| TrainError::Config("no epochs were run".into()))?;
    Ok(TrainOutcome {
        best,
        last: state.model,
        history: state.history,
    })
}

/// One value along an ablation axis.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Lambda(Vec<f64>),
    PromptLen(Vec<usize>),
    TopK(Vec<usize>),
    MatricesPerLanguage(Vec<usize>),
    Mode(Vec<Mode>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Lambda(_) => "lambda",
            SweepAxis::PromptLen(_) => "lp",
            SweepAxis::TopK(_) => "topk",
            SweepAxis::MatricesPerLanguage(_) => "mpl",
            SweepAxis::Mode(_) => "mode",
        }
    }

    /// The axis with its default value list.
    pub fn default_for(name: &str) -> Option<Self> {
        Some(match name {
            "lambda" => SweepAxis::Lambda(LAMBDA_GRID.to_vec()),
            "lp" => SweepAxis::PromptLen(PROMPT_LEN_GRID.to_vec()),
            "topk" | "k" => SweepAxis::TopK(vec![1, 2, 3]),
            "mpl" | "matrices_per_language" => SweepAxis::MatricesPerLanguage(vec![1, 2, 3]),
            "mode" => SweepAxis::Mode(vec![Mode::PoolQuery, Mode::PoolMasked, Mode::BackboneOnly]),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub config: ModelConfig,
}

fn fit_positions(config: &mut ModelConfig) {
    let need = 512 + config.pool.prompt_rows();
    if config.encoder.max_positions < need {
        config.encoder.max_positions = need;
    }
}

/// Expands `axis` into concrete model configurations derived from `base`.
pub fn sweep_points(base: &ModelConfig, axis: &SweepAxis) -> Result<Vec<SweepPoint>, ModelError> {
    let mut points = Vec::new();
    let mut push = |label: String, mut config: ModelConfig| -> Result<(), ModelError> {
        fit_positions(&mut config);
        config.validate()?;
        points.push(SweepPoint { label, config });
        Ok(())
    };
    match axis {
        SweepAxis::Lambda(values) => {
            for &l in values {
                push(format!("{l}"), ModelConfig { lambda: l, ..base.clone() })?;
            }
        }
        SweepAxis::PromptLen(values) => {
            for &lp in values {
                let mut c = base.clone();
                c.pool.prompt_len = lp;
                push(format!("{lp}"), c)?;
            }
        }
        SweepAxis::TopK(values) => {
            for &k in values {
                let mut c = base.clone();
                c.pool.top_k = k;
                if c.mode == Mode::PoolMasked {
                    c.pool.matrices_per_language = c.pool.matrices_per_language.max(k);
                    c.pool.size = c.pool.matrices_per_language * crate::corpus::Language::COUNT;
                    c.assignment = LanguageAssignment::contiguous(c.pool.matrices_per_language);
                }
                push(format!("{k}"), c)?;
            }
        }
        SweepAxis::MatricesPerLanguage(values) => {
            for &m in values {
                let mut c = base.clone();
                c.pool.matrices_per_language = m;
                c.pool.size = m * crate::corpus::Language::COUNT;
                c.assignment = LanguageAssignment::contiguous(m);
                push(format!("{m}"), c)?;
            }
        }
        SweepAxis::Mode(values) => {
            for &mode in values {
                push(mode.as_str().to_string(), ModelConfig { mode, ..base.clone() })?;
            }
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub best_epoch: usize,
    pub val: MetricsReport,
    pub test: MetricsReport,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub initial_ce: f64,
    pub final_ce: f64,
}

/// Trains one sweep point from `seed` and scores its best checkpoint on
/// `test`.
pub fn run_point(
    point: &SweepPoint,
    train_set: &[EncodedSample],
    val: &[EncodedSample],
    test: &[EncodedSample],
    config: &TrainConfig,
) -> Result<SweepRow, TrainError> {
    let model = MulVulnModel::new(point.config.clone(), config.seed)?;
    let outcome = train(model, train_set, val, config, &mut ())?;
    let test_report = evaluate(&outcome.best.model, test)?.report;
    let h = &outcome.history;
    Ok(SweepRow {
        label: point.label.clone(),
        best_epoch: outcome.best.epoch,
        val: h.epochs[outcome.best.epoch - 1].val,
        test: test_report,
        initial_loss: h.initial_loss,
        final_loss: h.final_loss().unwrap_or(f64::NAN),
        initial_ce: h.initial_ce,
        final_ce: h.final_ce().unwrap_or(f64::NAN),
    })
}

/// Trains one model per axis value with a shared seed.
pub fn sweep(
    base: &ModelConfig,
    axis: &SweepAxis,
    train_set: &[EncodedSample],
    val: &[EncodedSample],
    test: &[EncodedSample],
    config: &TrainConfig,
) -> Result<Vec<SweepRow>, TrainError> {
    sweep_points(base, axis)?
        .iter()
        .map(|p| run_point(p, train_set, val, test, config))
        .collect()
}

/// Trains one model per λ in `config.lambda_grid` and keeps the one with
/// the best validation F1 (ties to the earlier grid entry).
pub fn tune_lambda(
    base: &ModelConfig,
    train_set: &[EncodedSample],
    val: &[EncodedSample],
    config: &TrainConfig,
) -> Result<(f64, TrainOutcome), TrainError> {
    let mut best: Option<(f64, TrainOutcome)> = None;
    for &lambda in &config.lambda_grid {
        let model = MulVulnModel::new(ModelConfig { lambda, ..base.clone() }, config.seed)?;
        let outcome = train(model, train_set, val, config, &mut ())?;
        if best.as_ref().is_none_or(|(_, b)| outcome.best.val_f1 > b.best.val_f1) {
            best = Some((lambda, outcome));
        }
    }
    best.ok_or_else(|| TrainError::Config("empty lambda grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Language};
    use crate::encoder::EncoderConfig;
    use crate::pool::{PoolConfig, QuerySource};
    use crate::tokenizer::Vocabulary;

    fn data(n: usize, seed: u64) -> (Vec<EncodedSample>, usize) {
        let corpus = generate_synthetic(n, 0.5, seed);
        let vocab = Vocabulary::build(&corpus, 256).unwrap();
        (EncodedSample::encode_all(&corpus, &vocab, 512), vocab.size())
    }

    fn config(vocab: usize, mode: Mode) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                n_layers: 1,
                n_heads: 2,
                d_model: 8,
                d_ffn: 16,
                max_positions: 517,
                dropout_rate: 0.0,
            },
            vocab_size: vocab,
            pool: PoolConfig::default(),
            mode,
            lambda: 0.1,
            query_from: QuerySource::MeanEmbedding,
            assignment: LanguageAssignment::contiguous(1),
        }
    }

    fn tc(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            adam: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_leaves_params() {
        let (samples, v) = data(2, 1);
        let model = MulVulnModel::new(config(v, Mode::PoolMasked), 1).unwrap();
        let mut cfg = tc(1);
        cfg.adam.lr = 0.0;
        cfg.batch_size = samples.len();
        let out = train(model.clone(), &samples, &[], &cfg, &mut ()).unwrap();
        assert_eq!(out.last, model);
    }

    #[test]
    fn order_is_a_seeded_permutation() {
        let a = epoch_order(50, 3, 1);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(50, 3, 1));
        assert_ne!(a, epoch_order(50, 3, 2));
        assert_ne!(a, epoch_order(50, 4, 1));
    }

    #[test]
    fn deterministic_history_and_resume() {
        let (samples, v) = data(6, 2);
        let (train_set, val) = samples.split_at(35);
        let model = MulVulnModel::new(config(v, Mode::PoolQuery), 3).unwrap();
        let a = train(model.clone(), train_set, val, &tc(4), &mut ()).unwrap();
        let b = train(model.clone(), train_set, val, &tc(4), &mut ()).unwrap();
        assert_eq!(a, b);

        let mut state = TrainState::new(model);
        run_epochs(&mut state, train_set, val, &tc(2), &mut ()).unwrap();
        let mut resumed = state.clone();
        run_epochs(&mut resumed, train_set, val, &tc(4), &mut ()).unwrap();
        let c = finish(resumed).unwrap();
        assert_eq!(c, a);
        for (x, y) in c.last.params().iter().zip(a.last.params().iter()) {
            assert!(x.2.data.iter().zip(&y.2.data).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn best_epoch_matches_history() {
        let (samples, v) = data(6, 5);
        let (train_set, val) = samples.split_at(28);
        let model = MulVulnModel::new(config(v, Mode::PoolMasked), 5).unwrap();
        let mut seen = Vec::new();
        let mut obs = |s: &TrainState| {
            seen.push(s.epochs_done);
            Ok(())
        };
        let out = train(model, train_set, val, &tc(4), &mut obs).unwrap();
        assert_eq!(seen, [1, 2, 3, 4]);
        assert_eq!(out.history.epochs.len(), 4);
        assert_eq!(Some(out.best.epoch), out.history.best_epoch());
        let best_f1 = out.history.epochs.iter().map(|r| r.val.f1).fold(f64::MIN, f64::max);
        assert_eq!(out.best.val_f1, best_f1);
        assert!(out.history.epochs.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn empty_val_keeps_last_epoch() {
        let (samples, v) = data(3, 6);
        let model = MulVulnModel::new(config(v, Mode::PoolMasked), 6).unwrap();
        let out = train(model, &samples, &[], &tc(3), &mut ()).unwrap();
        assert_eq!(out.best.epoch, 3);
        assert_eq!(out.best.model, out.last);
    }

    #[test]
    fn masked_selection_counts_are_diagonal() {
        let (samples, v) = data(4, 7);
        let model = MulVulnModel::new(config(v, Mode::PoolMasked), 7).unwrap();
        let out = train(model, &samples, &[], &tc(1), &mut ()).unwrap();
        let counts = &out.history.epochs[0].selection_counts;
        for lang in Language::ALL {
            for (i, &c) in counts[lang.index()].iter().enumerate() {
                assert_eq!(c > 0, i == lang.index());
            }
        }
    }

    #[test]
    fn every_parameter_touched_each_epoch() {
        let (samples, v) = data(4, 8);
        let model = MulVulnModel::new(config(v, Mode::PoolMasked), 8).unwrap();
        let out = train(model, &samples, &[], &tc(2), &mut ()).unwrap();
        for r in &out.history.epochs {
            let names: Vec<&str> = out
                .last
                .params()
                .iter()
                .filter(|(id, _, _)| !r.touched[id.0])
                .map(|(_, n, _)| n)
                .collect();
            assert!(names.is_empty(), "untouched: {names:?}");
        }
    }

    #[test]
    fn pool_query_touches_every_non_pool_parameter() {
        let (samples, v) = data(4, 9);
        let model = MulVulnModel::new(config(v, Mode::PoolQuery), 9).unwrap();
        let out = train(model, &samples, &[], &tc(1), &mut ()).unwrap();
        let r = &out.history.epochs[0];
        for (id, name, _) in out.last.params().iter() {
            if !name.starts_with("pool.") {
                assert!(r.touched[id.0], "{name}");
            }
        }
        let selected: Vec<usize> = (0..7).filter(|&i| r.selection_counts.iter().any(|c| c[i] > 0)).collect();
        for i in selected {
            assert!(r.touched[out.last.pool().key(i).0]);
            assert!(r.touched[out.last.pool().matrix(i).0]);
        }
    }

    #[test]
    fn non_finite_loss_aborts() {
        let (samples, v) = data(2, 10);
        let mut model = MulVulnModel::new(config(v, Mode::BackboneOnly), 10).unwrap();
        let w = model.classifier()[0];
        model.params_mut().get_mut(w).data[0] = f64::NAN;
        let err = train(model, &samples, &[], &tc(1), &mut ()).unwrap_err();
        assert!(matches!(err, TrainError::NonFinite { epoch: 1, .. }), "{err:?}");
    }

    #[test]
    fn sweep_expansion() {
        let base = config(64, Mode::PoolMasked);
        let lp = sweep_points(&base, &SweepAxis::default_for("lp").unwrap()).unwrap();
        assert_eq!(lp.len(), 5);
        assert!(lp.iter().all(|p| p.config.encoder.max_positions >= 512 + p.config.pool.prompt_rows()));
        let modes = sweep_points(&base, &SweepAxis::default_for("mode").unwrap()).unwrap();
        assert_eq!(modes.iter().map(|p| p.label.as_str()).collect::<Vec<_>>(), ["pool_query", "pool_masked", "backbone_only"]);
        let mpl = sweep_points(&base, &SweepAxis::MatricesPerLanguage(vec![1, 2, 3])).unwrap();
        assert_eq!(mpl[2].config.pool.size, 21);
        assert_eq!(mpl[2].config.assignment.allowed(Language::Cpp), &[3, 4, 5]);
        let query_base = config(64, Mode::PoolQuery);
        let k = sweep_points(&query_base, &SweepAxis::default_for("topk").unwrap()).unwrap();
        assert_eq!(k.iter().map(|p| p.config.pool.top_k).collect::<Vec<_>>(), [1, 2, 3]);
        assert_eq!(k[2].config.pool.size, 7);
    }

    #[test]
    fn sweep_runs_and_lambda_tuning_picks_best() {
        let (samples, v) = data(4, 11);
        let (train_set, rest) = samples.split_at(20);
        let (val, test) = rest.split_at(4);
        let rows = sweep(
            &config(v, Mode::PoolMasked),
            &SweepAxis::Lambda(vec![0.0, 0.1]),
            train_set,
            val,
            test,
            &tc(2),
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.final_loss.is_finite()));
        let mut cfg = tc(2);
        cfg.lambda_grid = vec![0.0, 0.1];
        let (lambda, outcome) = tune_lambda(&config(v, Mode::PoolMasked), train_set, val, &cfg).unwrap();
        let want = if rows[1].val.f1 > rows[0].val.f1 { 0.1 } else { 0.0 };
        assert_eq!(lambda, want);
        assert_eq!(outcome.best.model.config().lambda, lambda);
    }
}
