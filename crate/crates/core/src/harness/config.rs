use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{line_of, toml_error};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::par::Exec;
use crate::ssl::{SslConfig, SslTask};
use crate::tasks::{TaskKind, TaskSpec};
use crate::train::TrainConfig;

/// Environment variable that replaces the configured output root.
pub const OUTPUT_ROOT_ENV: &str = "EPISEG_OUTPUT_ROOT";

/// The series a run fine-tunes and evaluates on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSeries {
    pub disease: String,
    /// First series of the disease when absent.
    #[serde(default)]
    pub region: Option<String>,
}

/// Current weeks of the rolling evaluation, as 0-based indices into the
/// target series: `start, start + step, ...` (`count` of them).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalWeeks {
    pub start: usize,
    pub count: usize,
    pub step: usize,
}

impl Default for EvalWeeks {
    fn default() -> Self {
        EvalWeeks {
            start: 0,
            count: 1,
            step: 1,
        }
    }
}

impl EvalWeeks {
    pub fn weeks(&self) -> Vec<usize> {
        (0..self.count).map(|i| self.start + i * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    pub no_pretrain: bool,
    pub no_linear_probe: bool,
    /// One time-step per token (P = S = 1).
    pub no_segments: bool,
    /// Skips instance normalization; dataset normalization stays.
    pub no_instance_norm: bool,
    /// Disease dropped from the pre-training corpus.
    pub exclude_disease: Option<String>,
    pub only_task: Option<SslTask>,
    /// Most recent share of each history used for fine-tuning.
    pub data_fraction: f64,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            no_pretrain: false,
            no_linear_probe: false,
            no_segments: false,
            no_instance_norm: false,
            exclude_disease: None,
            only_task: None,
            data_fraction: 1.0,
        }
    }
}

fn default_name() -> String {
    "experiment".into()
}

fn default_output_root() -> PathBuf {
    PathBuf::from("results")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// One experiment: corpus, model, training stages, task and ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Corpus manifest, relative to the config file.
    pub manifest: PathBuf,
    #[serde(default = "default_output_root")]
    pub output_root: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub exec: Exec,
    /// Extra pre-training cutoffs, overriding the manifest's.
    #[serde(default)]
    pub pretrain_cutoffs: BTreeMap<String, NaiveDate>,
    /// Also evaluate the persistence baseline (forecasting only).
    #[serde(default = "yes")]
    pub persistence_baseline: bool,
    pub target: TargetSeries,
    #[serde(default)]
    pub eval: EvalWeeks,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: TrainConfig,
    #[serde(default)]
    pub finetune: TrainConfig,
    #[serde(default)]
    pub ssl: SslConfig,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default)]
    pub ablation: Ablation,
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    /// Reads, overrides and validates a config file. Relative paths are
    /// resolved against the file's directory.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path, overrides)
    }

    pub fn parse(text: &str, path: &Path, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
        let mut value: toml::Table = toml::from_str(text).map_err(|e| toml_error(path, text, &e))?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        let mut cfg: ExperimentConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(|e| toml_error(path, text, &e))?
        } else {
            value
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))?
        };
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        if cfg.manifest.is_relative() {
            cfg.manifest = base.join(&cfg.manifest);
        }
        if cfg.output_root.is_relative() {
            cfg.output_root = base.join(&cfg.output_root);
        }
        cfg.validate().map_err(|(key, message)| Error::Parse {
            path: path.to_path_buf(),
            line: locate(text, key),
            message,
        })?;
        Ok(cfg)
    }

    /// Ablations folded into the model, SSL and fine-tuning settings.
    /// Applying it twice changes nothing.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        if c.ablation.no_segments {
            c.model.segment_len = 1;
            c.model.stride = 1;
        }
        if c.ablation.no_instance_norm {
            c.ssl.instance_norm = false;
        }
        if let Some(t) = c.ablation.only_task {
            c.ssl.tasks = vec![t];
        }
        if c.task.kind == TaskKind::Forecast {
            c.model.horizon = c.task.horizon;
        } else {
            c.model.season_weeks = c.task.season_length;
        }
        c
    }

    /// Output directory of this run, honouring the environment override.
    pub fn run_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_root.clone());
        root.join(&self.name)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Checks the configuration; on failure returns the offending key and
    /// a message.
    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let a = &self.ablation;
        if a.no_pretrain && a.only_task.is_some() {
            return Err(("only_task", "only_task has no effect together with no_pretrain".into()));
        }
        if !(a.data_fraction > 0.0 && a.data_fraction <= 1.0) {
            return Err(("data_fraction", format!("data_fraction must lie in (0, 1], got {}", a.data_fraction)));
        }
        if self.seeds.is_empty() {
            return Err(("seeds", "at least one seed is required".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(("name", format!("`{}` is not a usable directory name", self.name)));
        }
        if self.eval.count == 0 || self.eval.step == 0 {
            return Err(("eval", "eval.count and eval.step must be positive".into()));
        }
        if !self.manifest.is_file() {
            return Err(("manifest", format!("manifest {} does not exist", self.manifest.display())));
        }
        let r = self.resolved();
        r.model.validate().map_err(|e| ("model", e.to_string()))?;
        r.pretrain.validate().map_err(|e| ("pretrain", e.to_string()))?;
        r.finetune.validate().map_err(|e| ("finetune", e.to_string()))?;
        r.ssl.validate().map_err(|e| ("ssl", e.to_string()))?;
        r.task.validate().map_err(|e| ("task", e.to_string()))?;
        if r.task.kind == TaskKind::OnsetWeek && r.task.onset_baseline.is_none() {
            return Err(("onset_baseline", "onset task needs task.onset_baseline".into()));
        }
        Ok(())
    }
}

/// Line of the first `key =` assignment or `[key]` header; line 1 when
/// the key is absent.
fn locate(text: &str, key: &str) -> usize {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim_start();
        let is_assign = t
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='));
        let is_header = t.trim_end() == format!("[{key}]");
        if is_assign || is_header {
            return line_of(text, offset);
        }
        offset += line.len();
    }
    1
}

/// Sets the value at a dotted path such as `model.d_model`. The raw value
/// is read as a TOML literal, falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override path `{path}`")));
    }
    let value = parse_scalar(raw);
    let (last, parents) = parts.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{path}` is not a table")))?;
    }
    if matches!(cur.get(*last), Some(toml::Value::Table(_))) {
        return Err(Error::Config(format!("`{path}` is a table, not a scalar field")));
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}
