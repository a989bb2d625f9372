//! Dataset splitting, AdamW and the training loop with early stopping on the
//! validation loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedSentence, BioLabel};
use crate::evaluation::token_f1;
use crate::inference::predict_tokens;
use crate::model::{
    batch_grad, example_loss, EncoderConfig, Example, HeadKind, LossBreakdown, ModelError, ModelParams,
    TrainedModel, Vocab,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in {tensor} at step {step}")]
    NonFiniteGradient { step: u64, tensor: String },
    #[error("validation loss is not finite at step {step}")]
    DivergedTraining { step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl TrainError {
    pub fn kind(&self) -> &'static str {
        match self {
            TrainError::EmptyDataset => "EmptyDataset",
            TrainError::InvalidConfig(_) => "InvalidConfig",
            TrainError::NonFiniteGradient { .. } => "NonFiniteGradient",
            TrainError::DivergedTraining { .. } => "DivergedTraining",
            TrainError::Model(e) => e.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.8, val: 0.1, test: 0.1, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ratios = [self.train, self.val, self.test];
        if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(TrainError::InvalidConfig("split ratios must be non-negative".into()));
        }
        if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(TrainError::InvalidConfig("split ratios must sum to 1".into()));
        }
        Ok(())
    }
}

/// Partition sizes for `n` items: validation and test get the floor of their
/// share, training gets the rest.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> Result<(usize, usize, usize), TrainError> {
    spec.validate()?;
    // The small offset keeps products such as 0.29 * 100 from flooring to 28.
    let share = |r: f64| ((n as f64 * r) + 1e-9).floor() as usize;
    let (val, test) = (share(spec.val), share(spec.test));
    Ok((n - val - test, val, test))
}

/// Seeded shuffle followed by a split into (train, val, test).
pub fn split_dataset<T: Clone>(data: &[T], spec: &SplitSpec) -> Result<(Vec<T>, Vec<T>, Vec<T>), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (n_train, n_val, _) = split_sizes(data.len(), spec)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<T>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        AdamState { m: params.zeros_like(), v: params.zeros_like() }
    }
}

/// One AdamW update at step `t` (1-based). Weight decay is applied to the
/// parameters directly, scaled by the learning rate, before the moment step.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    t: u64,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    assert!(t >= 1, "steps are 1-based");
    let grads = grads.tensors();
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(TrainError::NonFiniteGradient { step: t, tensor: name.to_string() });
    }
    let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let mut i = 0;
    params.for_each_mut(|name, p| {
        let (gname, g) = grads[i];
        debug_assert_eq!(name, gname);
        i += 1;
        let m = state.m.tensor_mut(name).expect("moments mirror the parameters");
        for (mj, &gj) in m.data_mut().iter_mut().zip(g.data()) {
            *mj = ADAM_BETA1 * *mj + (1.0 - ADAM_BETA1) * gj;
        }
        let v = state.v.tensor_mut(name).expect("moments mirror the parameters");
        for (vj, &gj) in v.data_mut().iter_mut().zip(g.data()) {
            *vj = ADAM_BETA2 * *vj + (1.0 - ADAM_BETA2) * gj * gj;
        }
        let (m, v) = (state.m.tensor_mut(name).unwrap().data().to_vec(), state.v.tensor_mut(name).unwrap());
        for ((pj, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v.data()) {
            *pj -= lr * weight_decay * *pj;
            *pj -= lr * (mj / c1) / ((vj / c2).sqrt() + ADAM_EPS);
        }
    });
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the tagging loss. Ignored by the all-class variant.
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Validation checks without improvement before stopping.
    pub patience: usize,
    /// Steps between validation checks; `None` means ten checks per epoch.
    pub interval: Option<usize>,
    pub seed: u64,
    /// Global gradient-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 16,
            max_epochs: 1,
            patience: 3,
            interval: None,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a finite value >= 0");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be > 0");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.interval == Some(0) {
            return bad("validation interval must be at least 1");
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0 || c.is_nan()) {
            return bad("clip norm must be > 0");
        }
        Ok(())
    }
}

/// Encoder shape and head variant of a fresh model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub head: HeadKind,
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { head: HeadKind::Joint, dim: 32, heads: 4, window: 64 }
    }
}

/// A freshly initialized model whose vocabulary covers the training tokens.
pub fn init_model(train: &[AnnotatedSentence], arch: Architecture, seed: u64) -> Result<TrainedModel, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let vocab = Vocab::from_corpus(train);
    let config = EncoderConfig { vocab_size: vocab.len(), dim: arch.dim, heads: arch.heads, window: arch.window };
    let params = ModelParams::init(config, arch.head, seed)?;
    Ok(TrainedModel::new(vocab, params)?)
}

/// One validation check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    /// Mean training loss over the steps since the previous check.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_token_f1: f64,
    pub lambda: f64,
}

/// Training log as JSON lines.
pub fn log_to_jsonl(log: &[LogRecord]) -> String {
    log.iter()
        .map(|r| serde_json::to_string(r).expect("log records serialize") + "\n")
        .collect()
}

/// Mean loss over all examples. Per-example losses are computed in parallel
/// and summed in order.
pub fn dataset_loss(examples: &[Example], params: &ModelParams, lambda: f64) -> Result<LossBreakdown, ModelError> {
    let losses: Vec<LossBreakdown> = examples
        .par_iter()
        .map(|ex| example_loss(ex, params, lambda))
        .collect::<Result<_, _>>()?;
    let reported = if params.head_kind() == HeadKind::Joint { lambda } else { 1.0 };
    let mut total = LossBreakdown::new(0.0, 0.0, reported);
    for l in &losses {
        total = LossBreakdown::new(total.l_cls + l.l_cls, total.l_ner + l.l_ner, reported);
    }
    let n = examples.len().max(1) as f64;
    Ok(LossBreakdown::new(total.l_cls / n, total.l_ner / n, reported))
}

fn to_examples(sentences: &[AnnotatedSentence], model: &TrainedModel) -> Vec<Example> {
    sentences
        .iter()
        .flat_map(|s| Example::from_sentence(s, &model.vocab, model.params.config.window))
        .collect()
}

fn validation_f1(sentences: &[AnnotatedSentence], model: &TrainedModel) -> Result<f64, TrainError> {
    let pred: Vec<Vec<BioLabel>> = sentences
        .par_iter()
        .map(|s| predict_tokens(&s.tokens, model).map(|p| p.bio))
        .collect::<Result<_, _>>()
        .map_err(|e| match e {
            crate::inference::InferenceError::Model(m) => TrainError::Model(m),
            other => TrainError::InvalidConfig(other.to_string()),
        })?;
    let gold: Vec<Vec<BioLabel>> = sentences.iter().map(|s| s.bio.clone()).collect();
    Ok(token_f1(&gold, &pred).expect("predictions align with gold").f1)
}

/// Result of [`train`]: the parameters with the lowest validation loss and one
/// log record per validation check.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<LogRecord>,
    pub best_val_loss: f64,
    pub steps: u64,
}

/// Trains `model` with shuffled mini-batches and AdamW. Every `interval`
/// steps, and once after the final step, the full validation loss is
/// computed; the best parameters are kept. Training stops after `patience`
/// consecutive checks without improvement or after `max_epochs`.
///
/// An empty validation set falls back to the training set.
pub fn train(
    model: TrainedModel,
    train_set: &[AnnotatedSentence],
    val_set: &[AnnotatedSentence],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let val_set = if val_set.is_empty() {
        log::warn!("empty validation set, validating on the training set");
        train_set
    } else {
        val_set
    };
    let train_examples = to_examples(train_set, &model);
    let val_examples = to_examples(val_set, &model);
    let batches_per_epoch = train_examples.len().div_ceil(config.batch_size);
    let interval = config
        .interval
        .unwrap_or_else(|| (train_examples.len() / config.batch_size / 10).max(1));

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut current = model;
    let mut best: Option<(f64, TrainedModel)> = None;
    let mut state = AdamState::new(&current.params);
    let mut log = Vec::new();
    let mut step: u64 = 0;
    let mut stale = 0;
    let mut since_check = (0usize, 0.0f64);

    let mut check = |current: &TrainedModel, step: u64, epoch: usize, since: (usize, f64), log: &mut Vec<LogRecord>|
     -> Result<bool, TrainError> {
        let val = dataset_loss(&val_examples, &current.params, config.lambda)?;
        if !val.total.is_finite() {
            return Err(TrainError::DivergedTraining { step });
        }
        let record = LogRecord {
            step,
            epoch,
            train_loss: if since.0 == 0 { f64::NAN } else { since.1 / since.0 as f64 },
            val_loss: val.total,
            val_token_f1: validation_f1(val_set, current)?,
            lambda: val.lambda,
        };
        log::info!(
            "step {} epoch {} train {:.6} val {:.6} f1 {:.4}",
            record.step, record.epoch, record.train_loss, record.val_loss, record.val_token_f1
        );
        log.push(record);
        if best.as_ref().is_none_or(|(b, _)| val.total < *b) {
            best = Some((val.total, current.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        Ok(stale >= config.patience)
    };

    let mut stopped = false;
    'epochs: for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train_examples.len()).collect();
        order.shuffle(&mut rng);
        for b in 0..batches_per_epoch {
            let idx = &order[b * config.batch_size..((b + 1) * config.batch_size).min(order.len())];
            let batch: Vec<Example> = idx.iter().map(|&i| train_examples[i].clone()).collect();
            let (mut grad, loss) = batch_grad(&batch, &current.params, config.lambda)?;
            step += 1;
            if let Some(clip) = config.clip_norm {
                let norm = grad.norm();
                if norm > clip {
                    grad.scale(clip / norm);
                }
            }
            adamw_step(&mut current.params, &grad, &mut state, step, config.lr, config.weight_decay)?;
            since_check = (since_check.0 + 1, since_check.1 + loss.total);
            if step.is_multiple_of(interval as u64) {
                let stop = check(&current, step, epoch, since_check, &mut log)?;
                since_check = (0, 0.0);
                if stop {
                    stopped = true;
                    break 'epochs;
                }
            }
        }
    }
    if !stopped && (since_check.0 > 0 || log.is_empty()) {
        let epoch = config.max_epochs.saturating_sub(1);
        check(&current, step, epoch, since_check, &mut log)?;
    }
    let (best_val_loss, model) = best.expect("at least one validation check");
    Ok(TrainOutcome { model, log, best_val_loss, steps: step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic_corpus;
    use crate::taxonomy::toy_taxonomy;

    #[test]
    fn split_sizes_follow_floor_rule() {
        let spec = SplitSpec::default();
        assert_eq!(split_sizes(10, &spec).unwrap(), (8, 1, 1));
        assert_eq!(split_sizes(217_661, &spec).unwrap(), (174_129, 21_766, 21_766));
        assert_eq!(split_sizes(1, &spec).unwrap(), (1, 0, 0));
        let odd = SplitSpec { train: 0.42, val: 0.29, test: 0.29, seed: 0 };
        assert_eq!(split_sizes(100, &odd).unwrap(), (42, 29, 29));
        assert!(split_sizes(10, &SplitSpec { train: 0.5, ..spec }).is_err());
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let data: Vec<u32> = (0..97).collect();
        let spec = SplitSpec { seed: 4, ..Default::default() };
        let (a, b, c) = split_dataset(&data, &spec).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (79, 9, 9));
        let mut all: Vec<u32> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort();
        assert_eq!(all, data);
        assert_eq!(split_dataset(&data, &spec).unwrap(), (a.clone(), b, c));
        assert_ne!(split_dataset(&data, &SplitSpec { seed: 5, ..spec }).unwrap().0, a);
        assert!(matches!(split_dataset::<u32>(&[], &spec), Err(TrainError::EmptyDataset)));
    }

    fn scalar_params(value: f64) -> ModelParams {
        let vocab = Vocab::from_keys(["a"]);
        let cfg = EncoderConfig { vocab_size: vocab.len(), dim: 2, heads: 1, window: 2 };
        let mut p = ModelParams::init(cfg, HeadKind::Joint, 0).unwrap();
        p.for_each_mut(|_, m| m.data_mut().fill(value));
        p
    }

    #[test]
    fn adamw_first_step_by_hand() {
        let mut p = scalar_params(0.5);
        let mut g = p.zeros_like();
        g.for_each_mut(|_, m| m.data_mut().fill(1.0));
        let mut state = AdamState::new(&p);
        adamw_step(&mut p, &g, &mut state, 1, 1e-3, 0.0).unwrap();
        let m_hat = (1.0 - ADAM_BETA1) / (1.0 - ADAM_BETA1);
        let v_hat = (1.0 - ADAM_BETA2) / (1.0 - ADAM_BETA2);
        let expected = 0.5 - 1e-3 * m_hat / (v_hat.sqrt() + ADAM_EPS);
        for (_, m) in p.tensors() {
            for &x in m.data() {
                assert!((x - expected).abs() < 1e-15, "{x} vs {expected}");
            }
        }
    }

    #[test]
    fn adamw_zero_gradient() {
        let mut p = scalar_params(0.5);
        let g = p.zeros_like();
        let mut state = AdamState::new(&p);
        adamw_step(&mut p, &g, &mut state, 1, 1e-2, 0.0).unwrap();
        assert_eq!(p, scalar_params(0.5));
        adamw_step(&mut p, &g, &mut state, 2, 1e-2, 0.1).unwrap();
        assert_eq!(p, scalar_params(0.5 * (1.0 - 1e-2 * 0.1)));
    }

    #[test]
    fn adamw_rejects_non_finite_gradients() {
        let mut p = scalar_params(0.5);
        let mut g = p.zeros_like();
        g.tensor_mut("cls.b2").unwrap().data_mut()[0] = f64::NAN;
        let mut state = AdamState::new(&p);
        let err = adamw_step(&mut p, &g, &mut state, 1, 1e-3, 0.0).unwrap_err();
        assert_eq!(err.kind(), "NonFiniteGradient");
    }

    fn corpus() -> Vec<AnnotatedSentence> {
        generate_synthetic_corpus(&toy_taxonomy(), 24, 3).unwrap()
    }

    fn small() -> Architecture {
        Architecture { head: HeadKind::Joint, dim: 8, heads: 2, window: 32 }
    }

    #[test]
    fn patience_zero_keeps_first_check() {
        let data = corpus();
        let cfg = TrainConfig { patience: 0, interval: Some(1), batch_size: 4, ..Default::default() };
        let out = train(init_model(&data, small(), 1).unwrap(), &data, &data, &cfg).unwrap();
        assert_eq!(out.log.len(), 1);
        assert_eq!(out.log[0].step, 1);
        assert_eq!(out.steps, 1);
    }

    #[test]
    fn log_is_monotone_and_best_is_minimal() {
        let data = corpus();
        let cfg = TrainConfig { lr: 1e-2, batch_size: 4, max_epochs: 3, patience: 100, interval: Some(2), ..Default::default() };
        let out = train(init_model(&data, small(), 1).unwrap(), &data, &data, &cfg).unwrap();
        assert!(out.log.windows(2).all(|w| w[0].step < w[1].step));
        assert!(out.log.iter().all(|r| r.lambda == 0.1 && out.best_val_loss <= r.val_loss));
        assert!(out.log.last().unwrap().val_loss < out.log[0].val_loss);
        let again = train(init_model(&data, small(), 1).unwrap(), &data, &data, &cfg).unwrap();
        assert_eq!(again.model, out.model);
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainConfig { lambda: -1.0, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert_eq!(cfg.validate().unwrap_err().kind(), "InvalidConfig");
        }
    }
}
