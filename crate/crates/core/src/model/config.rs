use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the segmented encoder and the sizes of its task heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Segment length P in weeks.
    pub segment_len: usize,
    /// Stride S between segment starts.
    pub stride: usize,
    /// Embedding width D.
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Inner width of feed-forward blocks; `4 * d_model` when unset.
    pub ffn_width: Option<usize>,
    /// Forecast horizon K produced by the forecast head.
    pub horizon: usize,
    /// Number of classes of the week classifier.
    pub season_weeks: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            segment_len: 4,
            stride: 1,
            d_model: 32,
            n_layers: 6,
            n_heads: 8,
            ffn_width: None,
            horizon: 4,
            season_weeks: 52,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn ffn(&self) -> usize {
        self.ffn_width.unwrap_or(4 * self.d_model)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of segments produced from a series of length `t`.
    pub fn segment_count(&self, t: usize) -> Option<usize> {
        (t >= self.segment_len).then(|| (t - self.segment_len) / self.stride + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.segment_len == 0 {
            return fail("segment_len must be >= 1");
        }
        if self.stride == 0 || self.stride > self.segment_len {
            return fail("stride must satisfy 1 <= stride <= segment_len");
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return fail("d_model must be a positive even number");
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail("d_model must be divisible by n_heads");
        }
        if self.n_layers == 0 {
            return fail("n_layers must be >= 1");
        }
        if self.ffn() == 0 || self.horizon == 0 || self.season_weeks == 0 {
            return fail("ffn_width, horizon and season_weeks must be >= 1");
        }
        Ok(())
    }
}
