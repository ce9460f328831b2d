//! Multi-task pre-training with a shared backbone, two-stage fine-tuning
//! (linear probing then full tuning), early stopping and checkpoints.

mod checkpoint;
mod optim;

use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use optim::Adam;

use crate::error::{Error, Result};
use crate::model::{Example, Head, Model};
use crate::par::{self, Exec};
use crate::ssl::{batch_rng, sample_batch, PretrainCorpus, SslConfig, SslTask};

/// Examples per gradient work unit. Fixed so that the reduction order does
/// not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without improvement tolerated before stopping.
    pub patience: usize,
    /// Share of `max_epochs` spent on linear probing.
    pub probe_fraction: f64,
    /// Trailing share of fine-tuning examples held out for early stopping.
    pub validation_fraction: f64,
    /// Pre-training batches per epoch.
    pub steps_per_epoch: usize,
    /// Moving-average window of the pre-training stopping signal.
    pub smoothing_window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            max_epochs: 5000,
            patience: 100,
            probe_fraction: 0.2,
            validation_fraction: 0.1,
            steps_per_epoch: 1,
            smoothing_window: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.max_epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config("max_epochs and steps_per_epoch must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.probe_fraction)
            || !(0.0..1.0).contains(&self.validation_fraction)
        {
            return Err(Error::Config(
                "probe_fraction must lie in [0, 1] and validation_fraction in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Probe,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    Patience,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per task (pre-training) or the single training loss.
    pub losses: BTreeMap<String, f64>,
    pub total: f64,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: Stage,
    pub epochs: Vec<EpochRecord>,
    pub stopping_epoch: usize,
    pub stop_reason: StopReason,
    pub wall_seconds: f64,
    pub final_validation: Option<f64>,
}

impl TrainReport {
    fn empty(stage: Stage) -> TrainReport {
        TrainReport {
            stage,
            epochs: Vec::new(),
            stopping_epoch: 0,
            stop_reason: StopReason::Max,
            wall_seconds: 0.0,
            final_validation: None,
        }
    }

    /// Total loss per epoch.
    pub fn trajectory(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }

    /// Equality ignoring wall-clock time.
    pub fn same_run(&self, other: &TrainReport) -> bool {
        TrainReport {
            wall_seconds: 0.0,
            ..self.clone()
        } == TrainReport {
            wall_seconds: 0.0,
            ..other.clone()
        }
    }
}

/// Weighted loss sum, per-example losses and the weighted gradient sum.
pub fn weighted_gradient(
    model: &Model,
    examples: &[Example],
    weights: &[f64],
    exec: Exec,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    assert_eq!(examples.len(), weights.len());
    let n = model.n_params();
    let chunks = examples.len().div_ceil(GRAD_CHUNK);
    let parts = par::map_range(exec, chunks, |c| -> Result<(Vec<f64>, Vec<f64>)> {
        let range = c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(examples.len());
        let mut grads = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut losses = Vec::with_capacity(range.len());
        for i in range {
            scratch.fill(0.0);
            losses.push(model.loss_and_grad(&examples[i], &mut scratch)?);
            let w = weights[i];
            grads.iter_mut().zip(&scratch).for_each(|(g, s)| *g += w * s);
        }
        Ok((losses, grads))
    });
    let mut total = vec![0.0; n];
    let mut losses = Vec::with_capacity(examples.len());
    for part in parts {
        let (l, g) = part?;
        losses.extend(l);
        total.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
    }
    let loss = losses.iter().zip(weights).map(|(l, w)| l * w).sum();
    Ok((loss, losses, total))
}

/// Mean loss over `examples`.
pub fn mean_loss(model: &Model, examples: &[Example], exec: Exec) -> Result<f64> {
    let losses = par::map(exec, examples, |e| model.loss(e));
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / examples.len().max(1) as f64)
}

/// Mean losses of every SSL task over one batch drawn with `rng_index`.
/// Used to probe how one task's update affects the others.
pub fn ssl_task_losses(
    model: &Model,
    corpus: &PretrainCorpus,
    ssl: &SslConfig,
    seed: u64,
    rng_index: u64,
) -> Result<BTreeMap<SslTask, f64>> {
    let cfg = model.config();
    let batches = sample_batch(corpus, ssl, cfg.segment_len, cfg.stride, &mut batch_rng(seed, rng_index))?;
    let mut out = BTreeMap::new();
    for b in batches {
        let ex: Vec<Example> = b.samples.iter().map(|s| s.to_example()).collect();
        out.insert(b.task, mean_loss(model, &ex, Exec::Sequential)?);
    }
    Ok(out)
}

/// Trains the shared backbone and the SSL heads on batches drawn from the
/// corpus. Each step sums the per-task mean losses of one sampled batch.
pub fn pretrain(
    model: &Model,
    corpus: &PretrainCorpus,
    train: &TrainConfig,
    ssl: &SslConfig,
    exec: Exec,
) -> Result<(Model, TrainReport)> {
    train.validate()?;
    ssl.validate()?;
    let started = Instant::now();
    let mut model = model.clone();
    let mut ranges = vec![model.layout().backbone()];
    ranges.extend(ssl.tasks.iter().map(|t| model.layout().head(t.head())));
    let mut opt = Adam::new(model.n_params(), train.learning_rate);
    let (p, s) = (model.config().segment_len, model.config().stride);

    let mut report = TrainReport::empty(Stage::Pretrain);
    let mut stopper = EarlyStop::new(train.patience);
    let mut window: Vec<f64> = Vec::new();

    for epoch in 1..=train.max_epochs {
        let mut per_task: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        let mut epoch_total = 0.0;
        for step in 0..train.steps_per_epoch {
            let index = ((epoch - 1) * train.steps_per_epoch + step) as u64;
            let batches = sample_batch(corpus, ssl, p, s, &mut batch_rng(train.seed, index))?;
            let mut examples = Vec::new();
            let mut weights = Vec::new();
            let mut tags = Vec::new();
            for b in &batches {
                let w = 1.0 / b.samples.len() as f64;
                for sample in &b.samples {
                    examples.push(sample.to_example());
                    weights.push(w);
                    tags.push((b.task, b.dataset.as_str()));
                }
            }
            let (loss, losses, grads) = weighted_gradient(&model, &examples, &weights, exec)?;
            if let Some(i) = losses.iter().position(|l| !l.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    task: tags[i].0.to_string(),
                    dataset: tags[i].1.to_string(),
                    epoch,
                });
            }
            for ((task, _), (l, w)) in tags.iter().zip(losses.iter().zip(&weights)) {
                let e = per_task.entry(task.to_string()).or_default();
                e.0 += l * w;
                e.1 += 1;
            }
            epoch_total += loss;
            opt.step(model.params_mut(), &grads, &ranges);
        }
        let steps = train.steps_per_epoch as f64;
        let total = epoch_total / steps;
        let losses = per_task
            .into_iter()
            .map(|(k, (v, _))| (k, v / steps))
            .collect();
        report.epochs.push(EpochRecord {
            epoch,
            losses,
            total,
            validation: None,
        });
        report.stopping_epoch = epoch;

        window.push(total);
        if window.len() > train.smoothing_window.max(1) {
            window.remove(0);
        }
        let smoothed = window.iter().sum::<f64>() / window.len() as f64;
        if total <= f64::EPSILON {
            report.stop_reason = StopReason::Converged;
            break;
        }
        if stopper.observe(smoothed) {
            report.stop_reason = StopReason::Patience;
            break;
        }
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((model, report))
}

/// Tracks the best value seen and signals when `patience` consecutive
/// observations failed to improve on it.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> EarlyStop {
        EarlyStop {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Records `value`; true when training should stop.
    pub fn observe(&mut self, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.since_best = 0;
            false
        } else {
            self.since_best += 1;
            self.patience > 0 && self.since_best >= self.patience
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// True when the last observation was a new best.
    pub fn improved(&self) -> bool {
        self.since_best == 0
    }
}

/// Splits chronologically ordered examples into training and a trailing
/// validation share. Fewer than two examples leaves validation empty.
pub fn split_validation(examples: &[Example], fraction: f64) -> (&[Example], &[Example]) {
    if examples.len() < 2 || fraction <= 0.0 {
        return (examples, &[]);
    }
    let n_val = ((examples.len() as f64 * fraction).ceil() as usize).clamp(1, examples.len() - 1);
    examples.split_at(examples.len() - n_val)
}

/// Full-batch training of the parameters in `ranges`. Stops early on the
/// validation loss (training loss when there is no validation set) and
/// returns the best parameters seen.
fn fit(
    model: &Model,
    ranges: &[Range<usize>],
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    epochs: usize,
    stage: Stage,
    exec: Exec,
) -> Result<(Model, TrainReport)> {
    let started = Instant::now();
    let mut model = model.clone();
    let mut report = TrainReport::empty(stage);
    if epochs == 0 || train_set.is_empty() {
        return Ok((model, report));
    }
    let mut opt = Adam::new(model.n_params(), cfg.learning_rate);
    let weights = vec![1.0 / train_set.len() as f64; train_set.len()];
    let mut stopper = EarlyStop::new(cfg.patience);
    let mut best = model.clone();
    let mut best_val = None;

    for epoch in 1..=epochs {
        let (loss, _, grads) = weighted_gradient(&model, train_set, &weights, exec)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                task: format!("{stage:?}"),
                dataset: String::new(),
                epoch,
            });
        }
        // The loss above belongs to the parameters before this update.
        let validation = if val_set.is_empty() {
            None
        } else {
            Some(mean_loss(&model, val_set, exec)?)
        };
        let signal = validation.unwrap_or(loss);
        let stop = stopper.observe(signal);
        if stopper.improved() {
            best = model.clone();
            best_val = validation;
        }
        report.epochs.push(EpochRecord {
            epoch,
            losses: BTreeMap::from([("train".to_string(), loss)]),
            total: loss,
            validation,
        });
        report.stopping_epoch = epoch;
        if stop {
            report.stop_reason = StopReason::Patience;
            break;
        }
        if loss <= f64::EPSILON {
            report.stop_reason = StopReason::Converged;
            break;
        }
        opt.step(model.params_mut(), &grads, ranges);
    }
    if report.stop_reason == StopReason::Max {
        // The last update has not been scored yet.
        let scored = if val_set.is_empty() { train_set } else { val_set };
        let signal = mean_loss(&model, scored, exec)?;
        if signal < stopper.best() {
            best = model;
            best_val = (!val_set.is_empty()).then_some(signal);
        }
    }
    report.final_validation = best_val;
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok((best, report))
}

/// A model whose task head has been linearly probed (or that skipped
/// probing by request), ready for full fine-tuning.
#[derive(Debug, Clone)]
pub struct Probed {
    pub model: Model,
    pub head: Head,
}

impl Probed {
    /// Skips the probing stage (the "no linear probing" ablation).
    pub fn without_probe(model: Model, head: Head) -> Probed {
        Probed { model, head }
    }
}

/// Trains only the given head on top of the frozen backbone.
pub fn linear_probe(
    model: &Model,
    head: Head,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    epochs: usize,
    exec: Exec,
) -> Result<(Probed, TrainReport)> {
    let range = model.layout().head(head);
    let (model, report) = fit(model, &[range], train_set, val_set, cfg, epochs, Stage::Probe, exec)?;
    Ok((Probed { model, head }, report))
}

/// Trains the backbone and the probed head together.
pub fn fine_tune(
    probed: Probed,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    epochs: usize,
    exec: Exec,
) -> Result<(Model, TrainReport)> {
    let ranges = [
        probed.model.layout().backbone(),
        probed.model.layout().head(probed.head),
    ];
    fit(&probed.model, &ranges, train_set, val_set, cfg, epochs, Stage::Finetune, exec)
}

/// Linear probing for `probe_fraction` of the epoch budget, then full
/// fine-tuning for the rest, with a trailing validation split.
pub fn two_stage(
    model: &Model,
    head: Head,
    examples: &[Example],
    cfg: &TrainConfig,
    skip_probe: bool,
    exec: Exec,
) -> Result<(Model, Vec<TrainReport>)> {
    cfg.validate()?;
    let (train_set, val_set) = split_validation(examples, cfg.validation_fraction);
    let probe_epochs = if skip_probe {
        0
    } else {
        (cfg.max_epochs as f64 * cfg.probe_fraction).floor() as usize
    };
    let mut reports = Vec::new();
    let probed = if skip_probe {
        Probed::without_probe(model.clone(), head)
    } else {
        let (p, r) = linear_probe(model, head, train_set, val_set, cfg, probe_epochs, exec)?;
        reports.push(r);
        p
    };
    let (tuned, r) = fine_tune(probed, train_set, val_set, cfg, cfg.max_epochs - probe_epochs, exec)?;
    reports.push(r);
    Ok((tuned, reports))
}
