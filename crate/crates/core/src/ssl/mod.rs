//! Self-supervised batch generation: random, last-segment and peak masking
//! plus per-segment season detection, with their losses and the
//! multi-disease sampler.

mod sampler;

pub use sampler::{batch_rng, sample_batch, PretrainCorpus, SslConfig};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{assign_segment_season, SeasonMap};
use crate::error::{Error, Result};
use crate::model::{loss, Example, Head, Output, SegmentSequence, Target};

/// The four pre-training objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SslTask {
    RandMask,
    LastMask,
    PeakMask,
    SeasonDetect,
}

impl SslTask {
    pub const ALL: [SslTask; 4] = [
        SslTask::RandMask,
        SslTask::LastMask,
        SslTask::PeakMask,
        SslTask::SeasonDetect,
    ];

    pub fn head(self) -> Head {
        match self {
            SslTask::RandMask => Head::RandMask,
            SslTask::LastMask => Head::LastMask,
            SslTask::PeakMask => Head::PeakMask,
            SslTask::SeasonDetect => Head::Season,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SslTask::RandMask => "RandMask",
            SslTask::LastMask => "LastMask",
            SslTask::PeakMask => "PeakMask",
            SslTask::SeasonDetect => "SeasonDetect",
        }
    }
}

impl std::fmt::Display for SslTask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which segments (0-based) were zeroed and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub task: SslTask,
    pub gamma: f64,
    pub masked_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SslTargets {
    /// Unmasked segments.
    Segments(Array2<f64>),
    /// Season label (1..=4) per segment.
    Seasons(Vec<u8>),
}

/// One input window prepared for a self-supervised task.
#[derive(Debug, Clone, PartialEq)]
pub struct SslSample {
    pub task: SslTask,
    pub inputs: Array2<f64>,
    pub targets: SslTargets,
    pub mask: Option<MaskSpec>,
}

impl SslSample {
    pub fn to_example(&self) -> Example {
        let target = match &self.targets {
            SslTargets::Segments(s) => Target::Reconstruct {
                head: self.task.head(),
                segments: s.clone(),
            },
            SslTargets::Seasons(l) => Target::Season(l.clone()),
        };
        Example {
            segments: self.inputs.clone(),
            target,
        }
    }
}

/// Samples of one task drawn from one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SslBatch {
    pub task: SslTask,
    pub dataset: String,
    pub samples: Vec<SslSample>,
}

/// `max(1, floor(γ·L))` for γ > 0, capped at L; zero for γ = 0.
pub fn mask_count(gamma: f64, len: usize) -> usize {
    if gamma <= 0.0 || len == 0 {
        return 0;
    }
    // The small offset keeps products such as 0.29 * 100 from flooring to 28.
    let n = (gamma * len as f64 + 1e-9).floor() as usize;
    n.clamp(1, len)
}

fn masked(seq: &SegmentSequence, task: SslTask, gamma: f64, mut indices: Vec<usize>) -> SslSample {
    indices.sort_unstable();
    indices.dedup();
    let mut inputs = seq.segments.clone();
    for &l in &indices {
        inputs.row_mut(l).fill(0.0);
    }
    SslSample {
        task,
        inputs,
        targets: SslTargets::Segments(seq.segments.clone()),
        mask: Some(MaskSpec {
            task,
            gamma,
            masked_indices: indices,
        }),
    }
}

/// Zeroes a uniformly random set of `mask_count(γ, L)` segments.
pub fn rand_mask(seq: &SegmentSequence, gamma: f64, rng: &mut impl Rng) -> SslSample {
    let n = mask_count(gamma, seq.len());
    let indices = rand::seq::index::sample(rng, seq.len(), n).into_vec();
    masked(seq, SslTask::RandMask, gamma, indices)
}

/// Zeroes the trailing `mask_count(γ, L)` segments.
pub fn last_mask(seq: &SegmentSequence, gamma: f64) -> SslSample {
    let l = seq.len();
    let n = mask_count(gamma, l);
    masked(seq, SslTask::LastMask, gamma, (l - n..l).collect())
}

/// Zeroes every segment covering the first maximum of `raw_series`.
///
/// When the maximum lies in the tail dropped by segmentation no segment
/// covers it and nothing is masked.
pub fn peak_mask(seq: &SegmentSequence, raw_series: &[f64]) -> SslSample {
    let p = seq.segment_len();
    let indices = match crate::data::first_argmax(raw_series) {
        Some(t) => (0..seq.len())
            .filter(|&l| seq.start(l) <= t && t < seq.start(l) + p)
            .collect(),
        None => Vec::new(),
    };
    masked(seq, SslTask::PeakMask, 0.0, indices)
}

/// Unmasked inputs labelled with the season of every segment.
pub fn season_targets(seq: &SegmentSequence, season_map: &SeasonMap) -> Result<SslSample> {
    if seq.segment_months.len() != seq.len() {
        return Err(Error::Shape("segments carry no month stamps".into()));
    }
    let labels = seq
        .segment_months
        .iter()
        .map(|m| assign_segment_season(m, season_map))
        .collect();
    Ok(SslSample {
        task: SslTask::SeasonDetect,
        inputs: seq.segments.clone(),
        targets: SslTargets::Seasons(labels),
        mask: None,
    })
}

/// MSE over every segment entry for masking tasks; mean per-segment
/// cross-entropy for season detection.
pub fn ssl_loss(sample: &SslSample, prediction: &Output) -> Result<f64> {
    match (&sample.targets, prediction) {
        (SslTargets::Segments(t), Output::Segments(p)) => {
            if t.dim() != p.dim() {
                return Err(Error::Shape(format!("{:?} vs {:?}", p.dim(), t.dim())));
            }
            let t: Vec<f64> = t.iter().copied().collect();
            let p: Vec<f64> = p.iter().copied().collect();
            loss::mse(&p, &t)
        }
        (SslTargets::Seasons(labels), Output::SeasonLogits(logits)) => {
            if logits.nrows() != labels.len() || logits.ncols() != 4 {
                return Err(Error::Shape(format!(
                    "{:?} logits for {} labels",
                    logits.dim(),
                    labels.len()
                )));
            }
            let mut total = 0.0;
            for (row, &lab) in logits.rows().into_iter().zip(labels) {
                total += loss::cross_entropy(&row.to_vec(), (lab as usize).wrapping_sub(1))?;
            }
            Ok(total / labels.len().max(1) as f64)
        }
        _ => Err(Error::Shape("prediction kind does not match task".into())),
    }
}

/// Mean [`ssl_loss`] over a batch.
pub fn batch_loss(batch: &SslBatch, predictions: &[Output]) -> Result<f64> {
    if predictions.len() != batch.samples.len() {
        return Err(Error::Shape("one prediction per sample expected".into()));
    }
    let mut total = 0.0;
    for (s, p) in batch.samples.iter().zip(predictions) {
        total += ssl_loss(s, p)?;
    }
    Ok(total / batch.samples.len().max(1) as f64)
}
