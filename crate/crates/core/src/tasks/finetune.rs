use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use ndarray::Array2;

use super::{predicted_week, Predictor, TaskKind, TaskSpec};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::{instance_normalize, segment, Example, Head, InstanceStats, Model, Output, Target};
use crate::par::Exec;
use crate::train::{two_stage, TrainConfig, TrainReport};

/// History prepared for fine-tuning: dataset-normalized with statistics of
/// the history alone, plus the earliest index training windows may use.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSlice {
    pub raw: Vec<f64>,
    pub values: Vec<f64>,
    pub stats: NormStats,
    pub first_usable: usize,
}

impl TrainingSlice {
    /// Keeps the most recent `data_fraction` of the history for training.
    pub fn new(history: &[f64], data_fraction: f64) -> TrainingSlice {
        let stats = NormStats::pooled(history.iter());
        let n = history.len();
        let keep = ((n as f64 * data_fraction).ceil() as usize).min(n);
        TrainingSlice {
            raw: history.to_vec(),
            values: history.iter().map(|&v| stats.apply(v)).collect(),
            stats,
            first_usable: n - keep,
        }
    }
}

fn head_for(kind: TaskKind) -> Head {
    match kind {
        TaskKind::Forecast => Head::Forecast,
        TaskKind::PeakIntensity => Head::Scalar,
        TaskKind::PeakWeek | TaskKind::OnsetWeek => Head::Week,
    }
}

fn prepare(window: &[f64], instance_norm: bool, p: usize, s: usize) -> Result<(Array2<f64>, InstanceStats)> {
    let (values, stats) = if instance_norm {
        instance_normalize(window)
    } else {
        (window.to_vec(), InstanceStats::IDENTITY)
    };
    Ok((segment(&values, p, s)?.segments, stats))
}

fn too_short(len: usize, p: usize) -> Error {
    Error::SeriesTooShort {
        len,
        segment_len: p,
    }
}

/// Input window length actually used for a slice, or an error when even a
/// single segment cannot be formed.
fn effective_window(task: &TaskSpec, slice: &TrainingSlice, p: usize) -> Result<usize> {
    let avail = slice.values.len() - slice.first_usable;
    let reserve = if task.kind == TaskKind::Forecast { task.horizon } else { 0 };
    let w = task.input_window.min(avail.saturating_sub(reserve));
    if w < p {
        return Err(too_short(avail, p));
    }
    Ok(w)
}

/// Chronologically ordered training examples drawn from the slice.
pub fn build_examples(
    slice: &TrainingSlice,
    task: &TaskSpec,
    segment_len: usize,
    stride: usize,
    instance_norm: bool,
) -> Result<Vec<Example>> {
    let window = effective_window(task, slice, segment_len)?;
    let n = slice.values.len();
    let first_end = slice.first_usable + window - 1;
    let mut out = Vec::new();
    match task.kind {
        TaskKind::Forecast => {
            for end in first_end..n.saturating_sub(task.horizon) {
                let (segments, st) = prepare(&slice.values[end + 1 - window..=end], instance_norm, segment_len, stride)?;
                let target = slice.values[end + 1..=end + task.horizon]
                    .iter()
                    .map(|&v| st.apply(v))
                    .collect();
                out.push(Example {
                    segments,
                    target: Target::Forecast(target),
                });
            }
        }
        kind => {
            let mut s = 0;
            loop {
                let range = task.season_range(s);
                if range.end > n {
                    break;
                }
                s += 1;
                let Some(truth) = task.season_truth(&slice.raw[range.clone()]) else {
                    continue;
                };
                for end in range.start.max(first_end)..range.end {
                    let (segments, st) = prepare(&slice.values[end + 1 - window..=end], instance_norm, segment_len, stride)?;
                    let target = match kind {
                        TaskKind::PeakIntensity => Target::Scalar(st.apply(slice.stats.apply(truth))),
                        _ => Target::Week(truth as usize - 1),
                    };
                    out.push(Example { segments, target });
                }
            }
        }
    }
    Ok(out)
}

/// Fine-tunes a fresh copy of `base` on each history it is given (linear
/// probing then full tuning) and predicts from the latest window.
#[derive(Debug, Clone)]
pub struct FineTunePredictor {
    pub base: Model,
    pub train: TrainConfig,
    pub instance_norm: bool,
    pub skip_probe: bool,
    pub data_fraction: f64,
    /// Execution mode of the gradient loops inside one fine-tuning run.
    pub exec: Exec,
    reports: Arc<Mutex<BTreeMap<usize, Vec<TrainReport>>>>,
}

impl FineTunePredictor {
    pub fn new(base: Model, train: TrainConfig) -> FineTunePredictor {
        FineTunePredictor {
            base,
            train,
            instance_norm: true,
            skip_probe: false,
            data_fraction: 1.0,
            exec: Exec::Sequential,
            reports: Arc::default(),
        }
    }

    /// Training reports of every fit so far, keyed by current week, and
    /// clears them.
    pub fn take_reports(&self) -> BTreeMap<usize, Vec<TrainReport>> {
        std::mem::take(&mut *self.reports.lock().unwrap_or_else(|e| e.into_inner()))
    }

    /// Fine-tuned model for one history, with its training slice.
    pub fn fit(&self, history: &[f64], task: &TaskSpec) -> Result<(Model, TrainingSlice)> {
        let cfg = self.base.config();
        let kind = task.kind;
        if matches!(kind, TaskKind::PeakWeek | TaskKind::OnsetWeek) && cfg.season_weeks != task.season_length {
            return Err(Error::Config(format!(
                "week head has {} classes but seasons last {} weeks",
                cfg.season_weeks, task.season_length
            )));
        }
        if kind == TaskKind::Forecast && cfg.horizon != task.horizon {
            return Err(Error::Config(format!(
                "forecast head emits {} steps but the task asks for {}",
                cfg.horizon, task.horizon
            )));
        }
        let slice = TrainingSlice::new(history, self.data_fraction);
        let examples = build_examples(&slice, task, cfg.segment_len, cfg.stride, self.instance_norm)?;
        if examples.is_empty() {
            return Err(too_short(history.len(), cfg.segment_len));
        }
        let (model, reports) = two_stage(&self.base, head_for(kind), &examples, &self.train, self.skip_probe, self.exec)?;
        self.reports
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(history.len() - 1, reports);
        Ok((model, slice))
    }
}

impl Predictor for FineTunePredictor {
    fn predict(&self, history: &[f64], task: &TaskSpec) -> Result<Vec<f64>> {
        let (model, slice) = self.fit(history, task)?;
        let cfg = model.config();
        let window = effective_window(task, &slice, cfg.segment_len)?;
        let input = &slice.values[slice.values.len() - window..];
        let (segments, st) = prepare(input, self.instance_norm, cfg.segment_len, cfg.stride)?;
        let back = |v: f64| slice.stats.invert(st.invert(v));
        Ok(match model.predict(segments.view(), head_for(task.kind))? {
            Output::Forecast(v) => v.into_iter().map(back).collect(),
            Output::Scalar(v) => vec![back(v)],
            Output::WeekLogits(l) => vec![predicted_week(&l) as f64],
            _ => unreachable!("sequence-level heads only"),
        })
    }
}
