//! Downstream targets (forecasting, peak week, peak intensity, onset week),
//! their metrics, and the rolling real-time evaluation protocol.

mod finetune;
mod realtime;

pub use finetune::{build_examples, FineTunePredictor, TrainingSlice};
pub use realtime::{
    realtime_eval, EvalRecord, EvalResult, HorizonScore, PersistencePredictor, Predictor,
    SkippedPair,
};

use serde::{Deserialize, Serialize};

use crate::data::first_argmax;
use crate::error::{Error, Result};
use crate::model::loss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Forecast,
    PeakWeek,
    PeakIntensity,
    OnsetWeek,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Forecast => "forecast",
            TaskKind::PeakWeek => "peak_week",
            TaskKind::PeakIntensity => "peak_intensity",
            TaskKind::OnsetWeek => "onset_week",
        }
    }
}

/// What to predict and how season windows are laid out in the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Forecast horizon K.
    pub horizon: usize,
    /// Weeks of history fed to the model.
    pub input_window: usize,
    /// 0-based index of the first week of the first season window.
    pub season_start: usize,
    /// Weeks per season window W.
    pub season_length: usize,
    /// Onset threshold, required for onset prediction.
    pub onset_baseline: Option<f64>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            kind: TaskKind::Forecast,
            horizon: 4,
            input_window: 32,
            season_start: 0,
            season_length: 52,
            onset_baseline: None,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.input_window == 0 || self.season_length == 0 {
            return Err(Error::Config(
                "horizon, input_window and season_length must be >= 1".into(),
            ));
        }
        if self.kind == TaskKind::OnsetWeek && !self.onset_baseline.is_some_and(f64::is_finite) {
            return Err(Error::Config("onset prediction needs a finite onset_baseline".into()));
        }
        Ok(())
    }

    /// Season window index containing week `w`, if any.
    pub fn season_of(&self, w: usize) -> Option<usize> {
        (w >= self.season_start).then(|| (w - self.season_start) / self.season_length)
    }

    /// Index range of season `s`.
    pub fn season_range(&self, s: usize) -> std::ops::Range<usize> {
        let start = self.season_start + s * self.season_length;
        start..start + self.season_length
    }

    /// Ground truth of a season task on a full season (1-based weeks).
    pub fn season_truth(&self, season: &[f64]) -> Option<f64> {
        match self.kind {
            TaskKind::Forecast => None,
            TaskKind::PeakWeek => peak_targets(season).map(|(w, _)| w as f64),
            TaskKind::PeakIntensity => peak_targets(season).map(|(_, v)| v),
            TaskKind::OnsetWeek => {
                onset_week(season, self.onset_baseline.unwrap_or(f64::INFINITY)).map(|w| w as f64)
            }
        }
    }
}

/// Peak week (1-based, first maximum) and peak value of a season.
pub fn peak_targets(season: &[f64]) -> Option<(usize, f64)> {
    first_argmax(season).map(|i| (i + 1, season[i]))
}

/// First week (1-based) of the earliest run of at least three consecutive
/// weeks strictly above `baseline`.
pub fn onset_week(season: &[f64], baseline: f64) -> Option<usize> {
    let mut run = 0;
    for (i, &v) in season.iter().enumerate() {
        if v > baseline {
            run += 1;
            if run == 3 {
                return Some(i + 1 - 2);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Root mean squared error.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Shape("rmse of empty sequences".into()));
    }
    loss::mse(predictions, truths).map(f64::sqrt)
}

/// Cross-entropy of week logits against the 1-based `true_week`.
pub fn peak_week_loss(logits: &[f64], true_week: usize) -> Result<f64> {
    if true_week == 0 {
        return Err(Error::LabelOutOfRange {
            label: 0,
            classes: logits.len(),
        });
    }
    loss::cross_entropy(logits, true_week - 1)
}

/// 1-based week of the largest logit.
pub fn predicted_week(logits: &[f64]) -> usize {
    first_argmax(logits).map_or(1, |i| i + 1)
}
