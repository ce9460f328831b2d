use std::path::Path;
use std::process::{Command, Output};

fn episeg(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_episeg"))
        .args(args)
        .env("EPISEG_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

const SPEC: &str = r#"
[[disease]]
name = "flu"
seasonal = true
amplitude = 5.0
noise = 0.1
peak_month = 1
series = 2
length = 110

[[disease]]
name = "rsv"
seasonal = true
amplitude = 3.0
noise = 0.1
peak_month = 12
series = 2
length = 110
"#;

fn config(manifest: &Path) -> String {
    format!(
        r#"name = "tiny"
manifest = "{}"
seeds = [1]
[target]
disease = "flu"
[eval]
start = 90
count = 2
step = 3
[model]
d_model = 8
n_layers = 1
n_heads = 2
[pretrain]
learning_rate = 0.002
max_epochs = 3
[finetune]
learning_rate = 0.005
max_epochs = 4
[ssl]
window = 24
[task]
input_window = 24
"#,
        manifest.display()
    )
}

#[test]
fn synth_run_sweep_plot() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("out");
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, SPEC).unwrap();

    let out = episeg(&["synth", spec.to_str().unwrap(), "--seed", "4"], &root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = root.join("synthetic/manifest.toml");
    assert!(manifest.is_file());

    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, config(&manifest)).unwrap();
    let out = episeg(&["run", cfg.to_str().unwrap(), "--finetune.max_epochs", "5", "--model.d_model=8"], &root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = root.join("tiny");
    for f in ["config.toml", "seed", "eval.csv", "summary.csv", "seed-1/eval.json", "seed-1/model.ckpt", "seed-1/train_reports.json"] {
        assert!(run_dir.join(f).is_file(), "{f} missing");
    }
    let copy = std::fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(copy.contains("max_epochs = 5"));

    let out = episeg(&["sweep", cfg.to_str().unwrap(), "--fractions", "0.6,1.0"], &root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fraction,seed,avg_rmse"));
    assert!(stdout.contains("monotone"));

    let out = episeg(&["plot", run_dir.to_str().unwrap()], &root);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run_dir.join("loss_curve.svg").is_file());
    assert!(run_dir.join("rmse_by_horizon.svg").is_file());
    let out = episeg(&["plot", root.join("tiny-sweep").to_str().unwrap()], &root);
    assert!(out.status.success());
    assert!(root.join("tiny-sweep/fraction_curve.svg").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("out");
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, SPEC).unwrap();
    assert!(episeg(&["synth", spec.to_str().unwrap(), "--seed", "1"], &root).status.success());
    let manifest = root.join("synthetic/manifest.toml");

    // Unknown key: config error with its line number.
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, format!("{}colour = 3\n", config(&manifest).replacen("[target]", "bogus = 1\n[target]", 1))).unwrap();
    let out = episeg(&["run", bad.to_str().unwrap()], &root);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":4:"), "{}", String::from_utf8_lossy(&out.stderr));

    // Rejected ablation combination.
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, config(&manifest)).unwrap();
    let out = episeg(&["run", cfg.to_str().unwrap(), "--ablation.no_pretrain", "true", "--ablation.only_task", "PeakMask"], &root);
    assert_eq!(out.status.code(), Some(1));

    // Evaluation weeks past the target series.
    let out = episeg(&["run", cfg.to_str().unwrap(), "--eval.start", "5000"], &root);
    assert_eq!(out.status.code(), Some(1));

    // Malformed data files are input errors too.
    std::fs::write(root.join("synthetic/flu.csv"), "disease,region,date,value\nflu,r0,not-a-date,1\n").unwrap();
    let out = episeg(&["run", cfg.to_str().unwrap()], &root);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    // Plotting an empty directory fails at run time and writes nothing.
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = episeg(&["plot", empty.to_str().unwrap()], &root);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(std::fs::read_dir(&empty).unwrap().count(), 0);
}

#[test]
fn shipped_configs_parse() {
    let dir = tempfile::tempdir().unwrap();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let out = episeg(
        &["synth", root.join("synthetic.toml").to_str().unwrap(), "--seed", "11", "--out", dir.path().to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = dir.path().join("manifest.toml");
    let cfg = episeg::harness::ExperimentConfig::load(
        &root.join("transfer.toml"),
        &[("manifest".into(), manifest.to_str().unwrap().into())],
    )
    .unwrap();
    assert_eq!(cfg.ablation.exclude_disease.as_deref(), Some("d5"));
    assert_eq!(cfg.seeds.len(), 5);
}
