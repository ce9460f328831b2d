use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use episeg::harness::{
    generate_synthetic, pretraining_corpus, run, sweep_data_fraction, DiseaseSpec, ExperimentConfig, SyntheticCorpusSpec,
};
use episeg::ssl::SslTask;
use episeg::tasks::{realtime_eval, PersistencePredictor, Predictor, TaskSpec};
use episeg::Exec;

fn disease(name: &str, month: u32, noise: f64, length: usize) -> DiseaseSpec {
    DiseaseSpec {
        name: name.into(),
        seasonal: true,
        period: 52,
        amplitude: 5.0,
        noise,
        peak_month: month,
        series: 2,
        length,
        baseline: 1.0,
        outbreak_rate: 0.0,
        pretrain_cutoff: None,
    }
}

fn corpus(dir: &Path, noise: f64) -> PathBuf {
    let spec = SyntheticCorpusSpec {
        start: NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(),
        diseases: vec![disease("flu", 1, noise, 130), disease("rsv", 12, noise, 130), disease("mumps", 4, noise, 130)],
    };
    generate_synthetic(&spec, 3, dir).unwrap()
}

fn config(dir: &Path, extra: &str) -> PathBuf {
    let manifest = corpus(dir, 0.2);
    let text = format!(
        r#"name = "small"
manifest = "{}"
output_root = "{}"
seeds = [2, 5]
[target]
disease = "flu"
[eval]
start = 100
count = 3
step = 4
[model]
d_model = 8
n_layers = 1
n_heads = 2
[pretrain]
learning_rate = 0.002
max_epochs = 8
[finetune]
learning_rate = 0.005
max_epochs = 6
[ssl]
window = 24
[task]
input_window = 24
{extra}"#,
        manifest.display(),
        dir.join("out").display()
    );
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn load(p: &Path, o: &[(&str, &str)]) -> ExperimentConfig {
    let o: Vec<(String, String)> = o.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    ExperimentConfig::load(p, &o).unwrap()
}

#[test]
fn provenance_copy_reproduces_tables() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(&load(&config(dir.path(), ""), &[])).unwrap();
    for f in ["config.toml", "seed", "eval.csv", "summary.csv", "persistence.csv"] {
        assert!(first.dir.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(first.dir.join("seed")).unwrap(), "2\n5\n");
    let again = load(&first.dir.join("config.toml"), &[("name", "small_again")]);
    let second = run(&again).unwrap();
    for f in ["eval.csv", "persistence.csv", "seed-2/eval.csv", "seed-5/eval.csv"] {
        assert_eq!(
            std::fs::read(first.dir.join(f)).unwrap(),
            std::fs::read(second.dir.join(f)).unwrap(),
            "{f}"
        );
    }
    for (a, b) in first.seeds.iter().zip(&second.seeds) {
        assert_eq!(a.eval, b.eval);
        assert!(a.pretrain.as_ref().unwrap().same_run(b.pretrain.as_ref().unwrap()));
    }
}

#[test]
fn exec_mode_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let p = config(dir.path(), "");
    let a = run(&load(&p, &[("exec", "sequential"), ("seeds", "[2]")])).unwrap();
    let b = run(&load(&p, &[("exec", "parallel"), ("seeds", "[2]"), ("name", "par")])).unwrap();
    assert_eq!(a.seeds[0].eval, b.seeds[0].eval);
}

#[test]
fn ablations_shape_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = config(dir.path(), "");

    let names = |cfg: &ExperimentConfig| -> Vec<String> {
        pretraining_corpus(cfg)
            .unwrap()
            .unwrap()
            .datasets
            .iter()
            .map(|d| d.name.clone())
            .collect()
    };
    assert_eq!(names(&load(&p, &[])), ["flu", "rsv", "mumps"]);
    assert_eq!(names(&load(&p, &[("ablation.exclude_disease", "flu")])), ["rsv", "mumps"]);

    // The target disease stops at the first evaluation week.
    let c = pretraining_corpus(&load(&p, &[])).unwrap().unwrap();
    assert!(c.datasets[0].series.iter().all(|s| s.len() == 101));
    assert!(c.datasets[1].series.iter().all(|s| s.len() == 130));

    let none = load(&p, &[("ablation.no_pretrain", "true"), ("seeds", "[2]"), ("name", "nopre")]);
    assert!(pretraining_corpus(&none).unwrap().is_none());
    let o = run(&none).unwrap();
    assert!(o.seeds[0].pretrain.is_none());
    assert!(!o.seeds[0].finetune.is_empty());

    let only = load(&p, &[("ablation.only_task", "PeakMask"), ("seeds", "[2]"), ("name", "peak")]);
    let o = run(&only).unwrap();
    let r = o.seeds[0].pretrain.as_ref().unwrap();
    assert!(r.epochs.iter().all(|e| e.losses.keys().eq([SslTask::PeakMask.name()])));

    let seg = load(&p, &[("ablation.no_segments", "true"), ("seeds", "[2]"), ("name", "noseg")]);
    let r = seg.resolved();
    assert_eq!((r.model.segment_len, r.model.stride), (1, 1));
    assert_eq!(r.model.d_model, 8);
    assert!(run(&seg).unwrap().seeds[0].eval.average_rmse.is_finite());

    let norm = load(&p, &[("ablation.no_instance_norm", "true"), ("ablation.no_linear_probe", "true"), ("seeds", "[2]"), ("name", "nonorm")]);
    let o = run(&norm).unwrap();
    // Without probing, each week has a single fine-tuning report.
    assert!(o.seeds[0].finetune.values().all(|v| v.len() == 1));
}

#[test]
fn sweep_rows_and_identity() {
    let dir = tempfile::tempdir().unwrap();
    let p = config(dir.path(), "");
    let cfg = load(&p, &[("seeds", "[5]")]);
    let base = run(&cfg).unwrap();
    let table = sweep_data_fraction(&cfg, &[0.05, 0.6, 0.8, 1.0]).unwrap();
    assert_eq!(table.rows.len(), 4);
    let full = table.rows.iter().find(|r| r.fraction == 1.0).unwrap();
    assert_eq!(full.average_rmse, Some(base.seeds[0].eval.average_rmse));
    // 5% of about 100 weeks cannot fill a 24-week window plus horizon.
    let tiny = &table.rows[0];
    assert_eq!(tiny.average_rmse, None);
    assert!(table.rows[1].average_rmse.is_some() && table.rows[2].average_rmse.is_some());
    let csv = std::fs::read_to_string(dir.path().join("out/small-sweep/sweep.csv")).unwrap();
    assert!(csv.contains(",skipped"));
    assert!(dir.path().join("out/small-sweep/config.toml").is_file());
    assert!(sweep_data_fraction(&cfg, &[0.0]).is_err());
    assert!(sweep_data_fraction(&cfg, &[1.2]).is_err());
}

/// Predicts the value one period earlier: exact on a noiseless cosine.
struct SeasonalNaive;

impl Predictor for SeasonalNaive {
    fn predict(&self, history: &[f64], task: &TaskSpec) -> episeg::Result<Vec<f64>> {
        let n = history.len();
        Ok((1..=task.horizon).map(|k| history[n + k - 1 - 52]).collect())
    }
}

#[test]
fn noiseless_corpus_is_exactly_forecastable() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ds) = episeg::data::load_corpus(corpus(dir.path(), 0.0)).unwrap();
    let s = &ds[0].series[0].values;
    let weeks: Vec<usize> = (60..120).collect();
    let task = TaskSpec::default();
    let naive = realtime_eval(&SeasonalNaive, "flu", s, &weeks, &task, Exec::Sequential).unwrap();
    let persist = realtime_eval(&PersistencePredictor, "flu", s, &weeks, &task, Exec::Sequential).unwrap();
    assert!(naive.average_rmse < 1e-5, "{}", naive.average_rmse);
    assert!(persist.average_rmse > 0.3);
}
