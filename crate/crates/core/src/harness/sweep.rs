use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::runner::{base_model, evaluate, median, prepare, write_provenance};
use super::ExperimentConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub fraction: f64,
    pub seed: u64,
    /// `None` when the fraction left too little data to evaluate.
    pub average_rmse: Option<f64>,
    pub evaluated_weeks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Whether the per-fraction median RMSE never rises as the fraction
    /// grows. Reported, not enforced.
    pub monotone: bool,
}

impl SweepTable {
    /// (fraction, median RMSE over the seeds that produced a score).
    pub fn medians(&self) -> Vec<(f64, f64)> {
        let mut fr: Vec<f64> = self.rows.iter().map(|r| r.fraction).collect();
        fr.sort_by(f64::total_cmp);
        fr.dedup();
        fr.into_iter()
            .filter_map(|f| {
                let v: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.fraction == f)
                    .filter_map(|r| r.average_rmse)
                    .collect();
                (!v.is_empty()).then(|| (f, median(v)))
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fraction,seed,avg_rmse,weeks,status\n");
        for r in &self.rows {
            match r.average_rmse {
                Some(v) => writeln!(s, "{},{},{v:.6},{},ok", r.fraction, r.seed, r.evaluated_weeks),
                None => writeln!(s, "{},{},,0,skipped", r.fraction, r.seed),
            }
            .ok();
        }
        s
    }
}

/// Re-runs the fine-tuning and evaluation of `cfg` with only the most
/// recent share of each history, for every fraction and seed. Pre-training
/// is shared across fractions. Writes `sweep.csv` under
/// `<run dir>-sweep`.
pub fn sweep_data_fraction(cfg: &ExperimentConfig, fractions: &[f64]) -> Result<SweepTable> {
    if fractions.is_empty() {
        return Err(Error::Config("no fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Config(format!("fraction {f} outside (0, 1]")));
    }
    let cfg = cfg.resolved();
    let dir = cfg.run_dir().with_file_name(format!("{}-sweep", cfg.name));
    write_provenance(&cfg, &dir)?;
    let prep = prepare(&cfg)?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let (base, _) = base_model(&cfg, &prep, seed)?;
        for &f in fractions {
            let mut c = cfg.clone();
            c.ablation.data_fraction = f;
            let (eval, _) = evaluate(&c, &prep, &base, seed)?;
            let scored = eval.evaluated_weeks > 0 && eval.average_rmse.is_finite();
            if !scored {
                log::warn!("fraction {f}, seed {seed}: too little data, row skipped");
            }
            rows.push(SweepRow {
                fraction: f,
                seed,
                average_rmse: scored.then_some(eval.average_rmse),
                evaluated_weeks: eval.evaluated_weeks,
            });
        }
    }
    let mut table = SweepTable { rows, monotone: false };
    let m = table.medians();
    table.monotone = m.windows(2).all(|w| w[1].1 <= w[0].1);
    log::info!(
        "median RMSE by fraction: {:?}; monotone non-increasing: {}",
        m,
        table.monotone
    );
    let path = dir.join("sweep.csv");
    std::fs::write(&path, table.to_csv()).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("sweep.json");
    std::fs::write(&path, serde_json::to_string_pretty(&table)?).map_err(|e| Error::io(&path, e))?;
    Ok(table)
}
