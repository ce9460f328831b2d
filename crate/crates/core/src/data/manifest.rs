use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{filter_sparse, load_csv, DiseaseDataset, DEFAULT_MIN_LENGTH};
use crate::error::{Error, Result};

/// Per-disease corpus metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiseaseEntry {
    #[serde(default)]
    pub seasonal: bool,
    /// Last date usable for pre-training.
    #[serde(default)]
    pub pretrain_cutoff: Option<NaiveDate>,
}

/// Corpus manifest: CSV files plus per-disease metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub diseases: BTreeMap<String, DiseaseEntry>,
    #[serde(default = "default_min_length")]
    pub min_length: usize,
}

fn default_min_length() -> usize {
    DEFAULT_MIN_LENGTH
}

impl Manifest {
    pub fn from_toml(text: &str, path: &Path) -> Result<Manifest> {
        toml::from_str(text).map_err(|e| crate::harness::toml_error(path, text, &e))
    }

    pub fn entry(&self, disease: &str) -> DiseaseEntry {
        self.diseases.get(disease).cloned().unwrap_or_default()
    }

    /// Applies the disease's pre-train cutoff date, dropping series that
    /// fall under the minimum length afterwards.
    pub fn pretrain_view(&self, dataset: &DiseaseDataset) -> Option<DiseaseDataset> {
        let mut d = dataset.clone();
        if let Some(cutoff) = self.entry(&d.name).pretrain_cutoff {
            d.series = d.series.iter().map(|s| s.truncated_at(cutoff)).collect();
        }
        filter_sparse(vec![d], self.min_length).pop()
    }
}

/// Loads every file listed in the manifest (paths relative to the manifest),
/// merges datasets by disease, applies seasonal flags and drops sparse series.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Manifest, Vec<DiseaseDataset>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest = Manifest::from_toml(&text, path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut merged: Vec<DiseaseDataset> = Vec::new();
    for file in &manifest.files {
        for d in load_csv(base.join(file))? {
            match merged.iter_mut().find(|m| m.name == d.name) {
                Some(m) => m.series.extend(d.series),
                None => merged.push(d),
            }
        }
    }
    for d in &mut merged {
        d.seasonal = manifest.entry(&d.name).seasonal;
    }
    let datasets = filter_sparse(merged, manifest.min_length);
    Ok((manifest, datasets))
}
