//! Mini-batch SGD on a [`Dataset`] with per-epoch evaluation.

use crate::data::Dataset;
use crate::model::{Gradients, MlpArch, MlpModel, ModelError};
use crate::rng::{derive_seed, rng_from_seed, sample_without_replacement};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Learning rates tried when a width has no tuned value.
pub const DEFAULT_LR_GRID: [f64; 5] = [0.01, 0.03, 0.1, 0.3, 1.0];

const EVAL_CHUNK: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, record: Box<RunRecord> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub shuffle_seed: u64,
    /// Train on a random subset of this size, drawn from `shuffle_seed`.
    #[serde(default)]
    pub subset_size: Option<usize>,
    /// Evaluate on the full training set every epoch.
    #[serde(default = "yes")]
    pub eval_train: bool,
    /// Evaluate on the test set every epoch.
    #[serde(default = "yes")]
    pub eval_test: bool,
}

fn yes() -> bool {
    true
}

impl TrainConfig {
    /// Full-MNIST protocol: 300 epochs, batch 100, constant rate 0.1.
    pub fn connectivity_scan(shuffle_seed: u64) -> Self {
        Self {
            epochs: 300,
            batch_size: 100,
            learning_rate: 0.1,
            momentum: 0.0,
            shuffle_seed,
            subset_size: None,
            eval_train: true,
            eval_test: true,
        }
    }

    /// 2048-sample protocol: 300 epochs, batch 256, rate tuned per width.
    pub fn subset_scan(learning_rate: f64, shuffle_seed: u64) -> Self {
        Self {
            epochs: 300,
            batch_size: 256,
            learning_rate,
            momentum: 0.0,
            shuffle_seed,
            subset_size: Some(2048),
            eval_train: true,
            eval_test: true,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean loss over the mini-batches of the epoch.
    pub mean_batch_loss: f64,
    pub train_loss: Option<f64>,
    pub train_acc: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    NonFiniteLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub arch: MlpArch,
    pub config: TrainConfig,
    pub init_seed: u64,
    pub mask_fingerprint: String,
    pub param_count: u64,
    pub connectivity: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub epochs: Vec<EpochMetrics>,
    pub best_train_acc: Option<f64>,
    pub best_test_acc: Option<f64>,
    pub best_test_epoch: Option<usize>,
    pub final_train_loss: f64,
    pub status: RunStatus,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    /// Recomputes the best-of fields from the epoch series.
    fn finalize(&mut self) {
        let mut best: Option<(f64, usize)> = None;
        for e in &self.epochs {
            if let Some(a) = e.test_acc {
                if best.map_or(true, |(b, _)| a > b) {
                    best = Some((a, e.epoch));
                }
            }
        }
        self.best_test_acc = best.map(|b| b.0);
        self.best_test_epoch = best.map(|b| b.1);
        self.best_train_acc = self
            .epochs
            .iter()
            .filter_map(|e| e.train_acc)
            .fold(None, |m, a| Some(m.map_or(a, |m: f64| m.max(a))));
        self.final_train_loss = self
            .epochs
            .last()
            .map(|e| e.train_loss.unwrap_or(e.mean_batch_loss))
            .unwrap_or(f64::NAN);
    }
}

/// Mean loss and accuracy over a whole dataset, evaluated in chunks.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<(f64, f64), ModelError> {
    let n = data.len();
    let mut loss = 0.0;
    let mut correct = 0;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (x, y) = data.batch(chunk);
        let (l, c) = model.evaluate(&x, &y)?;
        loss += l * chunk.len() as f64;
        correct += c;
    }
    Ok((loss / n as f64, correct as f64 / n as f64))
}

/// Heavy-ball SGD state: `v = momentum * v + g`, `w -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: Option<Gradients>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: None,
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        if self.momentum == 0.0 {
            model.add_scaled(grads, -self.learning_rate);
            return;
        }
        let v = self.velocity.get_or_insert_with(|| Gradients::zeros_like(model));
        v.accumulate(self.momentum, grads);
        model.add_scaled(v, -self.learning_rate);
    }
}

/// Stable identifier of a run: arch, config, seed and mask.
pub fn run_id(arch: &MlpArch, config: &TrainConfig, init_seed: u64) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(arch).expect("arch serializes"));
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(init_seed.to_le_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Trains `model` in place and records per-epoch metrics.
pub fn train(model: &mut MlpModel, train_set: &Dataset, test_set: &Dataset, config: &TrainConfig) -> Result<RunRecord, TrainError> {
    train_with_progress(model, train_set, test_set, config, |_| {})
}

pub fn train_with_progress(
    model: &mut MlpModel,
    train_set: &Dataset,
    test_set: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<RunRecord, TrainError> {
    config.validate()?;
    let start = Instant::now();
    let subset;
    let data = match config.subset_size {
        Some(size) => {
            subset = train_set
                .subset(size, derive_seed(config.shuffle_seed, &[u64::MAX]))
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
            &subset
        }
        None => train_set,
    };
    if data.is_empty() || (config.eval_test && test_set.is_empty()) {
        return Err(TrainError::InvalidConfig("empty dataset".into()));
    }
    let arch = model.arch().clone();
    let mut record = RunRecord {
        run_id: run_id(&arch, config, model.seed()),
        param_count: arch.param_count()?,
        connectivity: arch.overall_connectivity()?,
        arch,
        config: config.clone(),
        init_seed: model.seed(),
        mask_fingerprint: model.mask_fingerprint(),
        train_size: data.len(),
        test_size: test_set.len(),
        epochs: Vec::with_capacity(config.epochs),
        best_train_acc: None,
        best_test_acc: None,
        best_test_epoch: None,
        final_train_loss: f64::NAN,
        status: RunStatus::Completed,
        wall_clock_secs: 0.0,
    };

    let mut opt = Sgd::new(config.learning_rate, config.momentum);
    let n = data.len();
    for epoch in 1..=config.epochs {
        let mut rng = rng_from_seed(derive_seed(config.shuffle_seed, &[epoch as u64]));
        let order = sample_without_replacement(&mut rng, n, n);
        let mut loss_sum = 0.0;
        let mut finite = true;
        for batch in order.chunks(config.batch_size) {
            let (x, y) = data.batch(batch);
            let (loss, grads) = model.loss_and_gradients(&x, &y)?;
            if !loss.is_finite() {
                finite = false;
                break;
            }
            loss_sum += loss * batch.len() as f64;
            opt.step(model, &grads);
        }
        if !finite {
            record.status = RunStatus::NonFiniteLoss;
            record.finalize();
            record.wall_clock_secs = start.elapsed().as_secs_f64();
            return Err(TrainError::NonFiniteLoss {
                epoch,
                record: Box::new(record),
            });
        }
        let (train_loss, train_acc) = if config.eval_train {
            let (l, a) = evaluate(model, data)?;
            (Some(l), Some(a))
        } else {
            (None, None)
        };
        let (test_loss, test_acc) = if config.eval_test {
            let (l, a) = evaluate(model, test_set)?;
            (Some(l), Some(a))
        } else {
            (None, None)
        };
        let m = EpochMetrics {
            epoch,
            mean_batch_loss: loss_sum / n as f64,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
        };
        on_epoch(&m);
        record.epochs.push(m);
    }
    if model.mask_fingerprint() != record.mask_fingerprint || !masked_weights_zero(model) {
        return Err(TrainError::Model(ModelError::InvalidArch(
            "mask invariance violated during training".into(),
        )));
    }
    record.finalize();
    if !config.eval_train {
        record.final_train_loss = evaluate(model, data)?.0;
    }
    record.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(record)
}

/// True when every masked position of every layer holds exactly zero.
pub fn masked_weights_zero(model: &MlpModel) -> bool {
    model.layers().iter().all(|l| match l.mask() {
        Some(m) => l.weights().iter().enumerate().all(|(i, &w)| w == 0.0 || m.is_kept(i)),
        None => true,
    })
}

/// Outcome of training one arch at every rate of a grid.
#[derive(Debug, Clone)]
pub struct LrSelection {
    pub best_lr: f64,
    /// `(rate, final training loss)`; diverged runs report infinity.
    pub tried: Vec<(f64, f64)>,
}

/// Trains a fresh model per rate, without per-epoch evaluation, and picks
/// the rate with the lowest final training loss.
pub fn select_learning_rate(
    arch: &MlpArch,
    init_seed: u64,
    train_set: &Dataset,
    config: &TrainConfig,
    grid: &[f64],
) -> Result<LrSelection, TrainError> {
    let mut tried = Vec::with_capacity(grid.len());
    for &lr in grid {
        let cfg = TrainConfig {
            learning_rate: lr,
            eval_train: false,
            eval_test: false,
            ..config.clone()
        };
        let mut model = MlpModel::init(arch, init_seed)?;
        let loss = match train(&mut model, train_set, train_set, &cfg) {
            Ok(r) => r.final_train_loss,
            Err(TrainError::NonFiniteLoss { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        tried.push((lr, if loss.is_finite() { loss } else { f64::INFINITY }));
    }
    let best = tried
        .iter()
        .filter(|t| t.1.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| TrainError::InvalidConfig("every learning rate diverged".into()))?;
    Ok(LrSelection {
        best_lr: best.0,
        tried,
    })
}
