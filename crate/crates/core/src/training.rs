//! Optimizers and the training loop with early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, MultimodalBatch};
use crate::error::{Error, Result};
use crate::eval;
use crate::fusion::{predict, training_loss, FusionConfig};
use crate::models::ModelBundle;
use crate::tensor::{ParamStore, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

/// Learning-rate schedule over iterations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Constant,
    /// `(iteration, rate)` pairs: from `iteration` onward use `rate`.
    Steps { steps: Vec<(u64, f64)> },
    /// Multiply the rate by `factor` every `every` iterations.
    Exponential { factor: f64, every: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub schedule: Schedule,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate,
            momentum,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            weight_decay: 0.0,
            clip_norm: None,
            schedule: Schedule::Constant,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(learning_rate, 0.0)
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            v.push(format!("optimizer.learning_rate = {} must be >= 0", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            v.push(format!("optimizer.momentum = {} must be in [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            v.push(format!("optimizer.weight_decay = {} must be >= 0", self.weight_decay));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            v.push("optimizer.clip_norm must be > 0".into());
        }
        match &self.schedule {
            Schedule::Steps { steps } if steps.iter().any(|(_, r)| !(*r >= 0.0)) => {
                v.push("optimizer.schedule steps need rates >= 0".into());
            }
            Schedule::Exponential { factor, every } if !(*factor > 0.0) || *every == 0 => {
                v.push("optimizer.schedule exponential needs factor > 0 and every > 0".into());
            }
            _ => {}
        }
        v
    }

    pub fn rate_at(&self, iteration: u64) -> f64 {
        match &self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::Steps { steps } => steps
                .iter()
                .filter(|(at, _)| *at <= iteration)
                .max_by_key(|(at, _)| *at)
                .map_or(self.learning_rate, |(_, r)| *r),
            Schedule::Exponential { factor, every } => {
                self.learning_rate * factor.powi((iteration / every) as i32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DevMetric {
    #[default]
    Error,
    Auc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// Evaluations without dev improvement before stopping.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Evaluate every this many iterations; `None` means once per epoch.
    #[serde(default)]
    pub eval_every: Option<u64>,
    #[serde(default)]
    pub max_iterations: Option<u64>,
    #[serde(default)]
    pub dev_metric: DevMetric,
}

fn default_batch() -> usize {
    100
}
fn default_epochs() -> usize {
    100
}
fn default_patience() -> usize {
    15
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            eval_every: None,
            max_iterations: None,
            dev_metric: DevMetric::Error,
        }
    }
}

impl TrainingConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push("training.batch_size must be positive".into());
        }
        if self.max_epochs == 0 {
            v.push("training.max_epochs must be positive".into());
        }
        if self.eval_every == Some(0) {
            v.push("training.eval_every must be positive".into());
        }
        v
    }
}

/// Optimizer buffers and early-stopping bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub iteration: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    pub best_dev: Option<f64>,
    pub since_improvement: usize,
}

impl TrainState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            iteration: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            best_dev: None,
            since_improvement: 0,
        }
    }
}

/// One forward/backward/update cycle. Returns the minibatch loss.
pub fn step(
    bundle: &mut ModelBundle,
    batch: &MultimodalBatch,
    fusion: &FusionConfig,
    opt: &OptimizerConfig,
    state: &mut TrainState,
) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = training_loss(&mut tape, bundle, batch, fusion)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Diverged {
            iteration: state.iteration,
            loss: value,
        });
    }
    tape.backward(loss, bundle.params_mut())?;
    apply_update(bundle.params_mut(), opt, state);
    Ok(value)
}

/// Applies one optimizer update from the gradients held in `store`, adding
/// the L2 decay term on decaying tensors and clipping the global norm.
pub fn apply_update(store: &mut ParamStore, opt: &OptimizerConfig, state: &mut TrainState) {
    let ids: Vec<_> = store.ids().collect();
    let mut g: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            let t = store.get(id);
            let mut g = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
            if opt.weight_decay > 0.0 && store.decays(id) {
                for (gi, w) in g.iter_mut().zip(t.data()) {
                    *gi += opt.weight_decay * w;
                }
            }
            g
        })
        .collect();

    if let Some(max_norm) = opt.clip_norm {
        let norm = g.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            g.iter_mut().flatten().for_each(|x| *x *= s);
        }
    }

    let lr = opt.rate_at(state.iteration);
    let t = (state.iteration + 1) as f64;
    for (slot, &id) in ids.iter().enumerate() {
        let gi = &g[slot];
        let m = &mut state.first_moment[slot];
        let w = store.get_mut(id).data_mut();
        match opt.kind {
            OptimizerKind::SgdMomentum => {
                for ((wi, mi), gv) in w.iter_mut().zip(m.iter_mut()).zip(gi) {
                    *mi = opt.momentum * *mi + gv;
                    *wi -= lr * *mi;
                }
            }
            OptimizerKind::Adam => {
                let v = &mut state.second_moment[slot];
                let (b1, b2) = (opt.adam_beta1, opt.adam_beta2);
                let c1 = 1.0 - b1.powf(t);
                let c2 = 1.0 - b2.powf(t);
                for (((wi, mi), vi), gv) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(gi) {
                    *mi = b1 * *mi + (1.0 - b1) * gv;
                    *vi = b2 * *vi + (1.0 - b2) * gv * gv;
                    *wi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + opt.adam_eps);
                }
            }
        }
    }
    state.iteration += 1;
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: u64,
    pub epoch: usize,
    /// Mean minibatch loss since the previous evaluation.
    pub train_loss: f64,
    pub dev_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<LogEntry>,
    pub best_dev: f64,
    pub best_iteration: u64,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iteration,epoch,train_loss,dev_metric\n");
        for e in &self.log {
            s.push_str(&format!("{},{},{},{}\n", e.iteration, e.epoch, e.train_loss, e.dev_metric));
        }
        s
    }
}

/// Dev metric where lower is better: error rate, or `1 - AUC`.
pub fn dev_score(
    bundle: &ModelBundle,
    dev: &Dataset,
    fusion: &FusionConfig,
    metric: DevMetric,
) -> Result<f64> {
    let p = predict(bundle, &dev.as_batch(), fusion)?;
    match metric {
        DevMetric::Error => eval::error_rate(&p.classes, &dev.labels),
        DevMetric::Auc => Ok(1.0 - eval::auc(&p.scores, &dev.labels)?),
    }
}

/// Trains with seeded shuffling, evaluates on dev at the configured cadence,
/// stops after `patience` evaluations without improvement, and leaves the
/// bundle at its best-dev parameters.
pub fn train(
    bundle: &mut ModelBundle,
    train_set: &Dataset,
    dev: &Dataset,
    fusion: &FusionConfig,
    opt: &OptimizerConfig,
    cfg: &TrainingConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || dev.is_empty() {
        return Err(Error::Contract("train and dev splits must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = TrainState::new(bundle.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best = bundle.params().values();
    let mut best_iteration = 0;
    let mut pending = (0.0, 0usize);
    let mut stopped_early = false;

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.batch(chunk);
            let loss = step(bundle, &batch, fusion, opt, &mut state)?;
            pending.0 += loss;
            pending.1 += 1;

            let at_limit = cfg.max_iterations.is_some_and(|m| state.iteration >= m);
            let due = cfg.eval_every.is_some_and(|k| state.iteration % k == 0);
            if due || at_limit {
                if evaluate(bundle, dev, fusion, cfg, epoch, &mut state, &mut pending, &mut log, &mut best, &mut best_iteration)? {
                    stopped_early = true;
                    break 'epochs;
                }
            }
            if at_limit {
                break 'epochs;
            }
        }
        if cfg.eval_every.is_none()
            && evaluate(bundle, dev, fusion, cfg, epoch, &mut state, &mut pending, &mut log, &mut best, &mut best_iteration)?
        {
            stopped_early = true;
            break;
        }
    }
    if state.best_dev.is_none() {
        evaluate(bundle, dev, fusion, cfg, cfg.max_epochs, &mut state, &mut pending, &mut log, &mut best, &mut best_iteration)?;
    }
    bundle.params_mut().restore(&best);
    Ok(TrainOutcome {
        log,
        best_dev: state.best_dev.unwrap_or(f64::NAN),
        best_iteration,
        stopped_early,
    })
}

/// Records one evaluation; returns true when patience is exhausted.
#[allow(clippy::too_many_arguments)]
fn evaluate(
    bundle: &ModelBundle,
    dev: &Dataset,
    fusion: &FusionConfig,
    cfg: &TrainingConfig,
    epoch: usize,
    state: &mut TrainState,
    pending: &mut (f64, usize),
    log: &mut Vec<LogEntry>,
    best: &mut Vec<Vec<f64>>,
    best_iteration: &mut u64,
) -> Result<bool> {
    let score = dev_score(bundle, dev, fusion, cfg.dev_metric)?;
    let train_loss = if pending.1 > 0 { pending.0 / pending.1 as f64 } else { f64::NAN };
    *pending = (0.0, 0);
    log.push(LogEntry {
        iteration: state.iteration,
        epoch,
        train_loss,
        dev_metric: score,
    });
    if state.best_dev.map_or(true, |b| score < b) {
        state.best_dev = Some(score);
        state.since_improvement = 0;
        *best = bundle.params().values();
        *best_iteration = state.iteration;
        Ok(false)
    } else {
        state.since_improvement += 1;
        Ok(state.since_improvement >= cfg.patience)
    }
}
