use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{last_mask, peak_mask, rand_mask, season_targets, SslBatch, SslSample, SslTask};
use crate::data::{dataset_normalize, detect_peak_season, DiseaseDataset, SeasonMap};
use crate::error::{Error, Result};
use crate::model::{instance_normalize, segment_with_months};

/// Knobs of the self-supervised sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SslConfig {
    pub rand_gamma: f64,
    pub last_gamma: f64,
    /// Length in weeks of each sampled window (truncated to the series).
    pub window: usize,
    /// Windows drawn per batch.
    pub windows_per_batch: usize,
    /// Tasks trained; season detection is still skipped for non-seasonal
    /// datasets.
    pub tasks: Vec<SslTask>,
    pub instance_norm: bool,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            rand_gamma: 0.2,
            last_gamma: 0.1,
            window: 64,
            windows_per_batch: 4,
            tasks: SslTask::ALL.to_vec(),
            instance_norm: true,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("rand_gamma", self.rand_gamma), ("last_gamma", self.last_gamma)] {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.window == 0 || self.windows_per_batch == 0 {
            return Err(Error::Config("window and windows_per_batch must be >= 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one SSL task is required".into()));
        }
        Ok(())
    }
}

/// Normalized pre-training datasets with their season maps.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainCorpus {
    pub datasets: Vec<DiseaseDataset>,
    pub season_maps: Vec<Option<SeasonMap>>,
}

impl PretrainCorpus {
    /// Normalizes each dataset independently and detects peak seasons of
    /// the seasonal ones.
    pub fn new(datasets: &[DiseaseDataset]) -> Result<PretrainCorpus> {
        let datasets = datasets
            .iter()
            .filter(|d| d.total_values() > 0)
            .map(dataset_normalize)
            .collect::<Result<Vec<_>>>()?;
        let season_maps = datasets
            .iter()
            .map(|d| d.seasonal.then(|| detect_peak_season(d)).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(PretrainCorpus {
            datasets,
            season_maps,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }
}

/// Independent stream for batch `index` derived from the master seed.
pub fn batch_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Draws one dataset uniformly, then `windows_per_batch` windows from its
/// series, and builds one batch per applicable task.
pub fn sample_batch(
    corpus: &PretrainCorpus,
    config: &SslConfig,
    segment_len: usize,
    stride: usize,
    rng: &mut impl Rng,
) -> Result<Vec<SslBatch>> {
    if corpus.is_empty() {
        return Err(Error::Config("pre-train corpus is empty".into()));
    }
    let di = rng.random_range(0..corpus.datasets.len());
    let dataset = &corpus.datasets[di];
    let season_map = corpus.season_maps[di].as_ref();
    let usable: Vec<usize> = (0..dataset.series.len())
        .filter(|&i| dataset.series[i].len() >= segment_len)
        .collect();
    if usable.is_empty() {
        return Err(Error::SeriesTooShort {
            len: dataset.series.iter().map(|s| s.len()).max().unwrap_or(0),
            segment_len,
        });
    }
    let tasks: Vec<SslTask> = SslTask::ALL
        .into_iter()
        .filter(|t| config.tasks.contains(t))
        .filter(|t| *t != SslTask::SeasonDetect || season_map.is_some())
        .collect();
    let mut batches: Vec<SslBatch> = tasks
        .iter()
        .map(|&task| SslBatch {
            task,
            dataset: dataset.name.clone(),
            samples: Vec::with_capacity(config.windows_per_batch),
        })
        .collect();

    for _ in 0..config.windows_per_batch {
        let series = &dataset.series[usable[rng.random_range(0..usable.len())]];
        let len = config.window.min(series.len()).max(segment_len);
        let start = rng.random_range(0..=series.len() - len);
        let raw = &series.values[start..start + len];
        let months = &series.month_stamps[start..start + len];
        let values = if config.instance_norm {
            instance_normalize(raw).0
        } else {
            raw.to_vec()
        };
        let seq = segment_with_months(&values, months, segment_len, stride)?;
        for batch in &mut batches {
            let sample: SslSample = match batch.task {
                SslTask::RandMask => rand_mask(&seq, config.rand_gamma, rng),
                SslTask::LastMask => last_mask(&seq, config.last_gamma),
                SslTask::PeakMask => peak_mask(&seq, raw),
                SslTask::SeasonDetect => {
                    season_targets(&seq, season_map.expect("filtered to seasonal"))?
                }
            };
            batch.samples.push(sample);
        }
    }
    Ok(batches)
}
