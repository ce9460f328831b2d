use serde::{Deserialize, Serialize};

use crate::data::STD_EPS;

/// Per-instance statistics kept until the model output is mapped back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceStats {
    pub mean: f64,
    pub std: f64,
}

impl InstanceStats {
    /// No-op statistics, used when instance normalization is disabled.
    pub const IDENTITY: InstanceStats = InstanceStats { mean: 0.0, std: 1.0 };

    fn scale(&self) -> f64 {
        self.std.max(STD_EPS)
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale()
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.scale() + self.mean
    }
}

/// Standardizes one input instance (population std, ε-guarded).
pub fn instance_normalize(series: &[f64]) -> (Vec<f64>, InstanceStats) {
    let n = series.len().max(1) as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let stats = InstanceStats {
        mean,
        std: var.sqrt(),
    };
    (series.iter().map(|&v| stats.apply(v)).collect(), stats)
}

/// Maps a model output back to the scale of the instance it came from.
pub fn instance_denormalize(output: &[f64], stats: &InstanceStats) -> Vec<f64> {
    output.iter().map(|&v| stats.invert(v)).collect()
}
