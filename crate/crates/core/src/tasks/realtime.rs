use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{rmse, TaskKind, TaskSpec};
use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Anything that predicts a task from the history up to the current week.
pub trait Predictor: Sync {
    /// `history` ends at the current week. Forecasts return K values;
    /// season tasks return one value (1-based week or intensity).
    fn predict(&self, history: &[f64], task: &TaskSpec) -> Result<Vec<f64>>;
}

/// Repeats the last observed value over the horizon.
#[derive(Debug, Clone, Copy, Default)]
pub struct PersistencePredictor;

impl Predictor for PersistencePredictor {
    fn predict(&self, history: &[f64], task: &TaskSpec) -> Result<Vec<f64>> {
        match (task.kind, history.last()) {
            (TaskKind::Forecast, Some(&last)) => Ok(vec![last; task.horizon]),
            (TaskKind::Forecast, None) => Err(Error::SeriesTooShort { len: 0, segment_len: 1 }),
            _ => Err(Error::Config("persistence only forecasts".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// 0-based index of the current week.
    pub week: usize,
    /// Steps ahead for forecasts; `None` for season tasks.
    pub horizon: Option<usize>,
    pub prediction: f64,
    pub truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub week: usize,
    pub horizon: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonScore {
    pub horizon: Option<usize>,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: String,
    pub dataset: String,
    pub scores: Vec<HorizonScore>,
    /// Mean of the per-horizon RMSEs.
    pub average_rmse: f64,
    pub evaluated_weeks: usize,
    pub records: Vec<EvalRecord>,
    pub skipped: Vec<SkippedPair>,
}

impl EvalResult {
    /// Rows of the `task,dataset,horizon,rmse,n` table.
    pub fn table_rows(&self) -> Vec<[String; 5]> {
        let mut rows: Vec<[String; 5]> = self
            .scores
            .iter()
            .map(|s| {
                [
                    self.task.clone(),
                    self.dataset.clone(),
                    s.horizon.map_or_else(|| "-".to_string(), |h| h.to_string()),
                    format!("{:.6}", s.rmse),
                    s.n.to_string(),
                ]
            })
            .collect();
        if self.scores.len() > 1 {
            rows.push([
                self.task.clone(),
                self.dataset.clone(),
                "avg".to_string(),
                format!("{:.6}", self.average_rmse),
                self.scores.iter().map(|s| s.n).sum::<usize>().to_string(),
            ]);
        }
        rows
    }

    pub fn write_csv(results: &[EvalResult], out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Config(format!("csv write failed: {e}"));
        w.write_record(["task", "dataset", "horizon", "rmse", "n"]).map_err(io)?;
        for r in results {
            for row in r.table_rows() {
                w.write_record(&row).map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn save_csv(results: &[EvalResult], path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        Self::write_csv(results, f)
    }
}

/// Rolling evaluation: for every current week `w`, the predictor sees only
/// `series[..=w]`; its output is scored against the weeks after `w`
/// (forecasts) or against the full season containing `w` (season tasks).
pub fn realtime_eval(
    predictor: &dyn Predictor,
    dataset: &str,
    series: &[f64],
    eval_weeks: &[usize],
    task: &TaskSpec,
    exec: Exec,
) -> Result<EvalResult> {
    task.validate()?;
    let outcomes = par::map(exec, eval_weeks, |&w| -> Result<Option<Vec<f64>>> {
        if w >= series.len() {
            return Ok(None);
        }
        let history = &series[..=w];
        match predictor.predict(history, task) {
            Ok(p) => Ok(Some(p)),
            Err(Error::SeriesTooShort { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut evaluated = 0;
    for (&w, outcome) in eval_weeks.iter().zip(outcomes) {
        let Some(pred) = outcome? else {
            skipped.push(SkippedPair {
                week: w,
                horizon: None,
                reason: "insufficient history".into(),
            });
            log::warn!("{dataset}: week {w} skipped, insufficient history");
            continue;
        };
        evaluated += 1;
        match task.kind {
            TaskKind::Forecast => {
                if pred.len() != task.horizon {
                    return Err(Error::Shape(format!(
                        "predictor returned {} values for horizon {}",
                        pred.len(),
                        task.horizon
                    )));
                }
                for k in 1..=task.horizon {
                    match series.get(w + k) {
                        Some(&truth) => records.push(EvalRecord {
                            week: w,
                            horizon: Some(k),
                            prediction: pred[k - 1],
                            truth,
                        }),
                        None => {
                            log::info!("{dataset}: no ground truth for week {w} + {k}");
                            skipped.push(SkippedPair {
                                week: w,
                                horizon: Some(k),
                                reason: "beyond end of series".into(),
                            });
                        }
                    }
                }
            }
            _ => {
                let truth = task
                    .season_of(w)
                    .map(|s| task.season_range(s))
                    .filter(|r| r.end <= series.len())
                    .and_then(|r| task.season_truth(&series[r]));
                match (truth, pred.first()) {
                    (Some(truth), Some(&prediction)) => records.push(EvalRecord {
                        week: w,
                        horizon: None,
                        prediction,
                        truth,
                    }),
                    _ => skipped.push(SkippedPair {
                        week: w,
                        horizon: None,
                        reason: "season incomplete or target undefined".into(),
                    }),
                }
            }
        }
    }

    let horizons: Vec<Option<usize>> = match task.kind {
        TaskKind::Forecast => (1..=task.horizon).map(Some).collect(),
        _ => vec![None],
    };
    let mut scores = Vec::new();
    for h in horizons {
        let (p, t): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter(|r| r.horizon == h)
            .map(|r| (r.prediction, r.truth))
            .unzip();
        if !p.is_empty() {
            scores.push(HorizonScore {
                horizon: h,
                rmse: rmse(&p, &t)?,
                n: p.len(),
            });
        }
    }
    let average_rmse = if scores.is_empty() {
        f64::NAN
    } else {
        scores.iter().map(|s| s.rmse).sum::<f64>() / scores.len() as f64
    };
    Ok(EvalResult {
        task: task.kind.name().to_string(),
        dataset: dataset.to_string(),
        scores,
        average_rmse,
        evaluated_weeks: evaluated,
        records,
        skipped,
    })
}
