use ndarray::Array2;

use crate::error::{Error, Result};

/// A series cut into L overlapping segments of length P with stride S.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSequence {
    /// L×P matrix; row `l` holds values `l*S .. l*S + P` (0-based).
    pub segments: Array2<f64>,
    /// Month stamps covered by each segment; empty when unknown.
    pub segment_months: Vec<Vec<u8>>,
    pub stride: usize,
}

impl SegmentSequence {
    pub fn len(&self) -> usize {
        self.segments.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment_len(&self) -> usize {
        self.segments.ncols()
    }

    /// 0-based start position of segment `l` in the source series.
    pub fn start(&self, l: usize) -> usize {
        l * self.stride
    }
}

/// Cuts `series` into `floor((T - P) / S) + 1` segments; trailing values not
/// covered by a full segment are dropped.
pub fn segment(series: &[f64], p: usize, s: usize) -> Result<SegmentSequence> {
    if p == 0 || s == 0 {
        return Err(Error::Config("segment length and stride must be >= 1".into()));
    }
    if series.len() < p {
        return Err(Error::SeriesTooShort {
            len: series.len(),
            segment_len: p,
        });
    }
    let l = (series.len() - p) / s + 1;
    let segments = Array2::from_shape_fn((l, p), |(i, j)| series[i * s + j]);
    Ok(SegmentSequence {
        segments,
        segment_months: Vec::new(),
        stride: s,
    })
}

/// Like [`segment`], also recording the months covered by each segment.
pub fn segment_with_months(
    series: &[f64],
    months: &[u8],
    p: usize,
    s: usize,
) -> Result<SegmentSequence> {
    if months.len() != series.len() {
        return Err(Error::Shape("months and values differ in length".into()));
    }
    let mut seq = segment(series, p, s)?;
    seq.segment_months = (0..seq.len())
        .map(|l| months[l * s..l * s + p].to_vec())
        .collect();
    Ok(seq)
}
