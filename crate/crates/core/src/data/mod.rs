//! Corpus ingestion, filtering, dataset-level normalization and season
//! metadata.

mod ingest;
mod manifest;
mod season;

pub use ingest::{load_csv, read_csv};
pub use manifest::{load_corpus, DiseaseEntry, Manifest};
pub use season::{assign_segment_season, detect_peak_season, first_argmax, MonthBlock, SeasonMap, WEEKS_PER_YEAR};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default minimum series length kept by [`filter_sparse`].
pub const DEFAULT_MIN_LENGTH: usize = 10;

/// Guard applied to standard deviations before dividing.
pub const STD_EPS: f64 = 1e-8;

/// One univariate weekly series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub disease: String,
    pub region: String,
    pub values: Vec<f64>,
    /// Month (1..=12) of each observation.
    pub month_stamps: Vec<u8>,
    /// Week-start date of each observation, when known.
    #[serde(default)]
    pub dates: Vec<NaiveDate>,
}

impl TimeSeries {
    /// Builds a series from dated observations; month stamps follow the dates.
    pub fn from_dated(
        disease: impl Into<String>,
        region: impl Into<String>,
        dates: Vec<NaiveDate>,
        values: Vec<f64>,
    ) -> Self {
        let month_stamps = dates.iter().map(|d| d.month() as u8).collect();
        TimeSeries {
            disease: disease.into(),
            region: region.into(),
            values,
            month_stamps,
            dates,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks the structural invariants of the series.
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.month_stamps.len() {
            return Err(Error::Shape(format!(
                "{} values but {} month stamps",
                self.values.len(),
                self.month_stamps.len()
            )));
        }
        if !self.dates.is_empty() && self.dates.len() != self.values.len() {
            return Err(Error::Shape("dates and values differ in length".into()));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite value at index {i}")));
        }
        for (i, &m) in self.month_stamps.iter().enumerate() {
            if !(1..=12).contains(&m) {
                return Err(Error::Shape(format!("month stamp {m} at index {i}")));
            }
        }
        for (i, w) in self.month_stamps.windows(2).enumerate() {
            let next = if w[0] == 12 { 1 } else { w[0] + 1 };
            if w[1] != w[0] && w[1] != next {
                return Err(Error::Shape(format!(
                    "month stamps jump from {} to {} at index {}",
                    w[0],
                    w[1],
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// Keeps only observations dated on or before `cutoff`. Series without
    /// dates are returned unchanged.
    pub fn truncated_at(&self, cutoff: NaiveDate) -> TimeSeries {
        if self.dates.is_empty() {
            return self.clone();
        }
        let n = self.dates.iter().take_while(|d| **d <= cutoff).count();
        TimeSeries {
            disease: self.disease.clone(),
            region: self.region.clone(),
            values: self.values[..n].to_vec(),
            month_stamps: self.month_stamps[..n].to_vec(),
            dates: self.dates[..n].to_vec(),
        }
    }
}

/// Pooled z-score statistics of a dataset (population std).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Pooled population mean and std of all values.
    pub fn pooled<'a>(values: impl IntoIterator<Item = &'a f64> + Clone) -> Self {
        let (n, sum) = values
            .clone()
            .into_iter()
            .fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
        if n == 0 {
            return NormStats { mean: 0.0, std: 0.0 };
        }
        let mean = sum / n as f64;
        let var = values
            .into_iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        NormStats {
            mean,
            std: var.sqrt(),
        }
    }

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

/// A named collection of series for one disease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiseaseDataset {
    pub name: String,
    pub series: Vec<TimeSeries>,
    pub seasonal: bool,
    pub normalization_stats: Option<NormStats>,
}

impl DiseaseDataset {
    pub fn new(name: impl Into<String>, series: Vec<TimeSeries>, seasonal: bool) -> Self {
        DiseaseDataset {
            name: name.into(),
            series,
            seasonal,
            normalization_stats: None,
        }
    }

    pub fn total_values(&self) -> usize {
        self.series.iter().map(TimeSeries::len).sum()
    }

    /// Undoes [`dataset_normalize`] on every value.
    pub fn denormalized(&self) -> DiseaseDataset {
        let mut out = self.clone();
        if let Some(stats) = self.normalization_stats {
            for s in &mut out.series {
                s.values.iter_mut().for_each(|v| *v = stats.invert(*v));
            }
            out.normalization_stats = None;
        }
        out
    }
}

/// Drops series shorter than `min_length`, then datasets left empty.
pub fn filter_sparse(datasets: Vec<DiseaseDataset>, min_length: usize) -> Vec<DiseaseDataset> {
    datasets
        .into_iter()
        .filter_map(|mut d| {
            d.series.retain(|s| s.len() >= min_length);
            (!d.series.is_empty()).then_some(d)
        })
        .collect()
}

/// Z-scores every value of the dataset with pooled statistics and records
/// them for inversion.
pub fn dataset_normalize(dataset: &DiseaseDataset) -> Result<DiseaseDataset> {
    if dataset.total_values() == 0 {
        return Err(Error::Shape(format!(
            "dataset `{}` has no values to normalize",
            dataset.name
        )));
    }
    let stats = NormStats::pooled(dataset.series.iter().flat_map(|s| s.values.iter()));
    let mut out = dataset.clone();
    for s in &mut out.series {
        s.values.iter_mut().for_each(|v| *v = stats.apply(*v));
    }
    out.normalization_stats = Some(stats);
    Ok(out)
}

/// Week-start date helper used by the generator and tests.
pub fn weekly_dates(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    (0..n)
        .map(|i| start + chrono::Duration::weeks(i as i64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn series(values: &[f64]) -> TimeSeries {
        let start = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
        TimeSeries::from_dated("d", "r", weekly_dates(start, values.len()), values.to_vec())
    }

    fn lens(ds: &[DiseaseDataset]) -> Vec<usize> {
        ds.iter().flat_map(|d| d.series.iter().map(|s| s.len())).collect()
    }

    #[test]
    fn filter_keeps_series_of_at_least_min_length() {
        let d = DiseaseDataset::new(
            "d",
            vec![series(&[0.0; 5]), series(&[0.0; 10]), series(&[0.0; 37])],
            false,
        );
        let out = filter_sparse(vec![d.clone()], DEFAULT_MIN_LENGTH);
        assert_eq!(lens(&out), vec![10, 37]);
        assert_eq!(filter_sparse(vec![d.clone()], 1), vec![d]);
        let short = DiseaseDataset::new("s", vec![series(&[1.0; 3])], true);
        assert!(filter_sparse(vec![short], 10).is_empty());
    }

    #[test]
    fn z_score_of_two_four_six() {
        let d = DiseaseDataset::new("d", vec![series(&[2.0, 4.0, 6.0])], false);
        let n = dataset_normalize(&d).unwrap();
        let stats = n.normalization_stats.unwrap();
        assert_abs_diff_eq!(stats.mean, 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(stats.std, 1.632993, epsilon = 1e-6);
        let v = &n.series[0].values;
        assert_abs_diff_eq!(v[0], -1.224745, epsilon = 1e-6);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], 1.224745, epsilon = 1e-6);
    }

    #[test]
    fn constant_dataset_maps_to_zero() {
        let d = DiseaseDataset::new("d", vec![series(&[5.0, 5.0, 5.0])], false);
        let n = dataset_normalize(&d).unwrap();
        assert_eq!(n.series[0].values, vec![0.0, 0.0, 0.0]);
        assert_eq!(n.denormalized().series[0].values, vec![5.0, 5.0, 5.0]);
    }

    #[test]
    fn standardized_input_is_unchanged() {
        let d = DiseaseDataset::new("d", vec![series(&[-1.0, 1.0, -1.0, 1.0])], false);
        let n = dataset_normalize(&d).unwrap();
        for (a, b) in n.series[0].values.iter().zip(&d.series[0].values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let d = DiseaseDataset::new("d", vec![], false);
        assert!(dataset_normalize(&d).is_err());
    }

    #[test]
    fn month_jumps_fail_validation() {
        let mut s = series(&[1.0, 2.0, 3.0]);
        assert!(s.validate().is_ok());
        s.month_stamps = vec![1, 3, 3];
        assert!(s.validate().is_err());
        s.month_stamps = vec![12, 1, 1];
        assert!(s.validate().is_ok());
    }

    proptest! {
        #[test]
        fn normalization_moments_and_inverse(
            a in prop::collection::vec(-1e3f64..1e3, 2..40),
            b in prop::collection::vec(-1e3f64..1e3, 1..40),
        ) {
            let d = DiseaseDataset::new("d", vec![series(&a), series(&b)], false);
            let n = dataset_normalize(&d).unwrap();
            let stats = NormStats::pooled(n.series.iter().flat_map(|s| s.values.iter()));
            if n.normalization_stats.unwrap().std > STD_EPS {
                prop_assert!(stats.mean.abs() < 1e-6);
                prop_assert!((stats.std - 1.0).abs() < 1e-6);
            }
            let back = n.denormalized();
            for (x, y) in back.series.iter().flat_map(|s| &s.values)
                .zip(d.series.iter().flat_map(|s| &s.values)) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn filter_is_idempotent(lens in prop::collection::vec(1usize..30, 0..8), min in 1usize..20) {
            let d = DiseaseDataset::new("d", lens.iter().map(|&n| series(&vec![0.0; n])).collect(), false);
            let once = filter_sparse(vec![d], min);
            let twice = filter_sparse(once.clone(), min);
            prop_assert_eq!(once, twice);
        }
    }
}
