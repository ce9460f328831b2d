use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentConfig;
use crate::data::{filter_sparse, load_corpus, DiseaseDataset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ssl::PretrainCorpus;
use crate::tasks::{realtime_eval, EvalResult, FineTunePredictor, PersistencePredictor, TaskKind};
use crate::train::{pretrain, save_checkpoint, TrainReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub eval: EvalResult,
    pub pretrain: Option<TrainReport>,
    /// Fine-tuning reports keyed by current week.
    pub finetune: BTreeMap<usize, Vec<TrainReport>>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub seeds: Vec<SeedOutcome>,
    pub persistence: Option<EvalResult>,
}

impl RunOutcome {
    /// Median over seeds of the averaged RMSE.
    pub fn median_average_rmse(&self) -> f64 {
        median(self.seeds.iter().map(|s| s.eval.average_rmse).collect())
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Everything a run needs besides the per-seed models.
pub(crate) struct Prepared {
    pub label: String,
    pub series: Vec<f64>,
    pub weeks: Vec<usize>,
    pub corpus: Option<PretrainCorpus>,
}

/// Loads the corpus, picks the target series and builds the pre-training
/// corpus. The target disease never contributes data past the first
/// evaluation week.
pub(crate) fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let (manifest, datasets) = load_corpus(&cfg.manifest)?;
    let t = &cfg.target;
    let target_ds = datasets
        .iter()
        .find(|d| d.name == t.disease)
        .ok_or_else(|| Error::Config(format!("target disease `{}` not in corpus", t.disease)))?;
    let target = match &t.region {
        Some(r) => target_ds.series.iter().find(|s| &s.region == r),
        None => target_ds.series.first(),
    }
    .ok_or_else(|| Error::Config(format!("target region {:?} not found for `{}`", t.region, t.disease)))?;
    let weeks = cfg.eval.weeks();
    let first = weeks[0];
    if first >= target.len() {
        return Err(Error::Config(format!(
            "first evaluation week {first} lies beyond the target series ({} weeks)",
            target.len()
        )));
    }
    let horizon_cutoff = target.dates[first];

    let corpus = if cfg.ablation.no_pretrain {
        None
    } else {
        let mut pool: Vec<DiseaseDataset> = Vec::new();
        for d in &datasets {
            if cfg.ablation.exclude_disease.as_deref() == Some(d.name.as_str()) {
                continue;
            }
            let Some(mut d) = manifest.pretrain_view(d) else { continue };
            let mut cutoff = cfg.pretrain_cutoffs.get(&d.name).copied();
            if d.name == t.disease {
                cutoff = Some(cutoff.map_or(horizon_cutoff, |c| c.min(horizon_cutoff)));
            }
            if let Some(c) = cutoff {
                d.series = d.series.iter().map(|s| s.truncated_at(c)).collect();
            }
            pool.push(d);
        }
        let pool = filter_sparse(pool, manifest.min_length);
        if pool.is_empty() {
            return Err(Error::Config("pre-training corpus is empty after exclusions and cutoffs".into()));
        }
        log::info!(
            "pre-training corpus: {}",
            pool.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join(", ")
        );
        Some(PretrainCorpus::new(&pool)?)
    };
    Ok(Prepared {
        label: format!("{}/{}", target.disease, target.region),
        series: target.values.clone(),
        weeks,
        corpus,
    })
}

/// The pre-training corpus a config would use (`None` under no_pretrain).
pub fn pretraining_corpus(cfg: &ExperimentConfig) -> Result<Option<PretrainCorpus>> {
    Ok(prepare(&cfg.resolved())?.corpus)
}

/// Initial model for one seed, pre-trained unless the ablation skips it.
pub(crate) fn base_model(cfg: &ExperimentConfig, prep: &Prepared, seed: u64) -> Result<(Model, Option<TrainReport>)> {
    let mut mc = cfg.model.clone();
    mc.seed = seed;
    let model = Model::new(mc)?;
    match &prep.corpus {
        None => Ok((model, None)),
        Some(corpus) => {
            let mut tc = cfg.pretrain.clone();
            tc.seed = seed;
            let (m, r) = pretrain(&model, corpus, &tc, &cfg.ssl, cfg.exec)?;
            log::info!("seed {seed}: pre-trained {} epochs ({:?})", r.stopping_epoch, r.stop_reason);
            Ok((m, Some(r)))
        }
    }
}

/// Rolling evaluation of one base model.
pub(crate) fn evaluate(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    base: &Model,
    seed: u64,
) -> Result<(EvalResult, BTreeMap<usize, Vec<TrainReport>>)> {
    let mut tc = cfg.finetune.clone();
    tc.seed = seed;
    let mut predictor = FineTunePredictor::new(base.clone(), tc);
    predictor.instance_norm = !cfg.ablation.no_instance_norm;
    predictor.skip_probe = cfg.ablation.no_linear_probe;
    predictor.data_fraction = cfg.ablation.data_fraction;
    let eval = realtime_eval(&predictor, &prep.label, &prep.series, &prep.weeks, &cfg.task, cfg.exec)?;
    Ok((eval, predictor.take_reports()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the resolved config (with an absolute manifest path) and the
/// master seeds into `dir`.
pub(crate) fn write_provenance(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    mkdir(dir)?;
    let mut copy = cfg.clone();
    copy.manifest = std::path::absolute(&cfg.manifest).map_err(|e| Error::io(&cfg.manifest, e))?;
    copy.output_root = std::path::absolute(&cfg.output_root).map_err(|e| Error::io(&cfg.output_root, e))?;
    write(&dir.join("config.toml"), copy.to_toml()?)?;
    let seeds: String = cfg.seeds.iter().map(|s| format!("{s}\n")).collect();
    write(&dir.join("seed"), seeds)
}

fn write_seed(dir: &Path, outcome: &SeedOutcome, model: &Model) -> Result<()> {
    mkdir(dir)?;
    write(&dir.join("seed"), format!("{}\n", outcome.seed))?;
    EvalResult::save_csv(std::slice::from_ref(&outcome.eval), &dir.join("eval.csv"))?;
    write(&dir.join("eval.json"), serde_json::to_string_pretty(&outcome.eval)?)?;
    let reports = serde_json::json!({
        "pretrain": outcome.pretrain,
        "finetune": outcome.finetune,
    });
    write(&dir.join("train_reports.json"), serde_json::to_string_pretty(&reports)?)?;
    save_checkpoint(model, dir.join("model.ckpt"))
}

fn summary(outcome: &RunOutcome) -> String {
    let mut s = String::from("model,seed,task,dataset,avg_rmse,weeks\n");
    for o in &outcome.seeds {
        let e = &o.eval;
        writeln!(s, "finetuned,{},{},{},{:.6},{}", o.seed, e.task, e.dataset, e.average_rmse, e.evaluated_weeks).ok();
    }
    if let Some(e) = &outcome.persistence {
        writeln!(s, "persistence,-,{},{},{:.6},{}", e.task, e.dataset, e.average_rmse, e.evaluated_weeks).ok();
    }
    s
}

/// Runs an experiment and writes its artifacts under `cfg.run_dir()`.
/// Artifacts of seeds that finished stay on disk when a later one fails.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let cfg = cfg.resolved();
    let dir = cfg.run_dir();
    write_provenance(&cfg, &dir)?;
    let prep = prepare(&cfg)?;
    let mut outcome = RunOutcome {
        dir: dir.clone(),
        seeds: Vec::new(),
        persistence: None,
    };
    if cfg.persistence_baseline && cfg.task.kind == TaskKind::Forecast {
        let p = realtime_eval(&PersistencePredictor, &prep.label, &prep.series, &prep.weeks, &cfg.task, cfg.exec)?;
        EvalResult::save_csv(std::slice::from_ref(&p), &dir.join("persistence.csv"))?;
        outcome.persistence = Some(p);
    }
    for &seed in &cfg.seeds {
        let (base, pretrain_report) = base_model(&cfg, &prep, seed)?;
        let (eval, finetune) = evaluate(&cfg, &prep, &base, seed)?;
        log::info!("seed {seed}: avg RMSE {:.6} over {} weeks", eval.average_rmse, eval.evaluated_weeks);
        let o = SeedOutcome {
            seed,
            eval,
            pretrain: pretrain_report,
            finetune,
        };
        write_seed(&dir.join(format!("seed-{seed}")), &o, &base)?;
        outcome.seeds.push(o);
        write(&dir.join("summary.csv"), summary(&outcome))?;
    }
    let all: Vec<EvalResult> = outcome.seeds.iter().map(|s| s.eval.clone()).collect();
    EvalResult::save_csv(&all, &dir.join("eval.csv"))?;
    Ok(outcome)
}

/// Loads a config file, applies `--path value` overrides and runs it.
pub fn run_file(path: &Path, overrides: &[(String, String)]) -> Result<RunOutcome> {
    run(&ExperimentConfig::load(path, overrides)?)
}
