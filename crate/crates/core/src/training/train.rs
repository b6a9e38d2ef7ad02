use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Dataset, TaskKind};
use super::metrics::{mae_tasks, mean_defined, roc_auc_tasks, Normalizer};
use super::split::SplitIndices;
use super::AdamState;
use crate::autodiff::{ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::mpnn::{GnnConfig, GnnModel};

/// Rows per forward pass during evaluation.
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Everything one training run produced. Metric fields are deterministic
/// given the configuration; `epoch_seconds` is wall-clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: GnnConfig,
    pub train: TrainConfig,
    pub task: TaskKind,
    /// `roc_auc` (higher is better) or `mae` (lower is better).
    pub metric: String,
    pub parameter_count: usize,
    pub train_loss: Vec<f64>,
    pub valid_metric: Vec<Option<f64>>,
    /// Zero-based epoch whose parameters produced `test_metric`.
    pub selected_epoch: usize,
    pub test_metric: Option<f64>,
    pub test_per_task: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_seconds: Vec<f64>,
}

impl RunReport {
    /// The report with wall-clock fields cleared, for determinism checks.
    pub fn metrics_only(&self) -> RunReport {
        RunReport {
            epoch_seconds: Vec::new(),
            ..self.clone()
        }
    }
}

pub fn metric_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Classification => "roc_auc",
        TaskKind::Regression => "mae",
    }
}

/// True when `candidate` beats `best` under the task's metric direction.
pub fn improves(kind: TaskKind, candidate: f64, best: f64) -> bool {
    match kind {
        TaskKind::Classification => candidate > best,
        TaskKind::Regression => candidate < best,
    }
}

/// Raw model outputs for `indices`, `len × tasks`.
pub fn predict(model: &GnnModel, store: &ParamStore, data: &Dataset, indices: &[usize]) -> Result<Tensor> {
    let t = model.config.n_tasks;
    let mut out = Vec::with_capacity(indices.len() * t);
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = data.batch(chunk)?;
        let mut tape = Tape::new();
        let y = model.forward(&mut tape, store, &batch)?;
        out.extend_from_slice(tape.value(y).data());
    }
    Tensor::new(vec![indices.len(), t], out)
}

/// Task metric over `indices`: per-task values and their mean.
pub fn evaluate(
    model: &GnnModel,
    store: &ParamStore,
    data: &Dataset,
    indices: &[usize],
    norm: &Normalizer,
) -> Result<(Option<f64>, Vec<Option<f64>>)> {
    if indices.is_empty() {
        return Ok((None, vec![None; data.n_tasks()]));
    }
    let raw = predict(model, store, data, indices)?;
    let (labels, mask) = data.targets(indices);
    Ok(match data.kind {
        TaskKind::Classification => {
            let auc = roc_auc_tasks(&raw, &labels, &mask)?;
            (auc.macro_average, auc.per_task)
        }
        TaskKind::Regression => {
            let per_task = mae_tasks(&norm.denormalize(&raw), &labels, &mask)?;
            (mean_defined(&per_task), per_task)
        }
    })
}

/// Trains `model` on the train split with minibatch Adam, keeps the
/// parameters of the best validation epoch, and reports the test metric of
/// that checkpoint. Regression targets are standardized with train-split
/// statistics; reported MAE is in original units.
///
/// A non-finite training loss aborts the run with [`Error::Diverged`].
pub fn train_loop(
    model: &GnnModel,
    store: &mut ParamStore,
    data: &Dataset,
    split: &SplitIndices,
    cfg: &TrainConfig,
) -> Result<RunReport> {
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if model.config.n_tasks != data.n_tasks() {
        return Err(Error::Config(format!(
            "model predicts {} tasks, dataset has {}",
            model.config.n_tasks,
            data.n_tasks()
        )));
    }
    let norm = match data.kind {
        TaskKind::Regression => Normalizer::fit(&data.labels, &data.mask, &split.train),
        TaskKind::Classification => Normalizer::identity(data.n_tasks()),
    };
    let train_targets = norm.normalize(&data.labels);

    let mut adam = AdamState::new(store, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order = split.train.clone();

    let mut report = RunReport {
        model: model.config.clone(),
        train: cfg.clone(),
        task: data.kind,
        metric: metric_name(data.kind).to_string(),
        parameter_count: store.scalar_count(),
        train_loss: Vec::with_capacity(cfg.epochs),
        valid_metric: Vec::with_capacity(cfg.epochs),
        selected_epoch: 0,
        test_metric: None,
        test_per_task: Vec::new(),
        epoch_seconds: Vec::with_capacity(cfg.epochs),
    };
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.batch(chunk)?;
            let mut labels = Vec::with_capacity(chunk.len() * data.n_tasks());
            let mut mask = Vec::with_capacity(chunk.len() * data.n_tasks());
            for &i in chunk {
                labels.extend_from_slice(train_targets.row(i));
                mask.extend_from_slice(data.mask.row(i));
            }
            let shape = vec![chunk.len(), data.n_tasks()];
            let labels = Arc::new(Tensor::new(shape.clone(), labels)?);
            let mask = Arc::new(Tensor::new(shape, mask)?);

            let mut tape = Tape::new();
            let y = model.forward(&mut tape, store, &batch)?;
            let loss = match data.kind {
                TaskKind::Classification => tape.masked_bce(y, labels, mask)?,
                TaskKind::Regression => tape.masked_mse(y, labels, mask)?,
            };
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "epoch {epoch}, batch {b}: loss {value} (seed {}, lr {})",
                    cfg.seed, cfg.lr
                )));
            }
            let grads = tape.backward(loss)?;
            store.accumulate(&tape, &grads);
            adam.step(store);
            loss_sum += value * chunk.len() as f64;
        }
        report.train_loss.push(loss_sum / order.len() as f64);

        let (valid, _) = evaluate(model, store, data, &split.valid, &norm)?;
        report.valid_metric.push(valid);
        if let Some(v) = valid {
            if best.as_ref().map_or(true, |(b, _, _)| improves(data.kind, v, *b)) {
                best = Some((v, epoch, store.snapshot()));
            }
        }
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch}: train loss {:.5}, valid {} {:?}",
            report.train_loss[epoch],
            report.metric,
            valid
        );
    }
    if adam.skipped() > 0 {
        log::warn!("{} parameter updates skipped for non-finite gradients", adam.skipped());
    }

    report.selected_epoch = match best {
        Some((_, epoch, snapshot)) => {
            store.restore(&snapshot)?;
            epoch
        }
        // no defined validation metric: keep the final parameters
        None => cfg.epochs - 1,
    };
    let (test, per_task) = evaluate(model, store, data, &split.test, &norm)?;
    report.test_metric = test;
    report.test_per_task = per_task;
    Ok(report)
}
