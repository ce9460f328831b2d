use serde::{Deserialize, Serialize};

use super::DiseaseDataset;
use crate::error::{Error, Result};

/// Weeks per "year" when scanning a series for yearly peaks.
pub const WEEKS_PER_YEAR: usize = 52;

/// Three-month calendar blocks, in calendar order starting from December.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MonthBlock {
    DecFeb = 0,
    MarMay = 1,
    JunAug = 2,
    SepNov = 3,
}

impl MonthBlock {
    pub const ALL: [MonthBlock; 4] = [
        MonthBlock::DecFeb,
        MonthBlock::MarMay,
        MonthBlock::JunAug,
        MonthBlock::SepNov,
    ];

    /// Block containing `month` (1..=12).
    pub fn of_month(month: u8) -> MonthBlock {
        match month {
            12 | 1 | 2 => MonthBlock::DecFeb,
            3..=5 => MonthBlock::MarMay,
            6..=8 => MonthBlock::JunAug,
            _ => MonthBlock::SepNov,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> MonthBlock {
        Self::ALL[i % 4]
    }
}

/// Disease-relative season labels: the peak block is season 1 and the
/// following blocks are seasons 2, 3 and 4 in calendar order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonMap {
    pub disease: String,
    pub peak_season_block: MonthBlock,
}

impl SeasonMap {
    pub fn new(disease: impl Into<String>, peak_season_block: MonthBlock) -> Self {
        SeasonMap {
            disease: disease.into(),
            peak_season_block,
        }
    }

    /// Season label (1..=4) of a block.
    pub fn label(&self, block: MonthBlock) -> u8 {
        ((block.index() + 4 - self.peak_season_block.index()) % 4) as u8 + 1
    }

    /// Block carrying season label `label` (1..=4).
    pub fn block(&self, label: u8) -> MonthBlock {
        MonthBlock::from_index(self.peak_season_block.index() + label as usize - 1)
    }

    /// The full block → label mapping.
    pub fn labels(&self) -> [(MonthBlock, u8); 4] {
        MonthBlock::ALL.map(|b| (b, self.label(b)))
    }
}

/// Finds the block in which the yearly maxima of the dataset most often
/// fall. Years are consecutive runs of up to 52 weeks from each series'
/// start; ties go to the earlier block counting from December.
pub fn detect_peak_season(dataset: &DiseaseDataset) -> Result<SeasonMap> {
    if !dataset.seasonal {
        return Err(Error::NonSeasonal(dataset.name.clone()));
    }
    let mut tally = [0usize; 4];
    for s in &dataset.series {
        for (vals, months) in s
            .values
            .chunks(WEEKS_PER_YEAR)
            .zip(s.month_stamps.chunks(WEEKS_PER_YEAR))
        {
            if let Some(i) = first_argmax(vals) {
                tally[MonthBlock::of_month(months[i]).index()] += 1;
            }
        }
    }
    let peak = first_max_index(&tally);
    Ok(SeasonMap::new(dataset.name.clone(), MonthBlock::from_index(peak)))
}

/// Season label (1..=4) of a segment: the block holding most of its time
/// steps, ties broken towards the earlier block counting from December.
pub fn assign_segment_season(segment_months: &[u8], season_map: &SeasonMap) -> u8 {
    let mut counts = [0usize; 4];
    for &m in segment_months {
        counts[MonthBlock::of_month(m).index()] += 1;
    }
    season_map.label(MonthBlock::from_index(first_max_index(&counts)))
}

fn first_max_index(counts: &[usize; 4]) -> usize {
    let mut best = 0;
    for i in 1..4 {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    best
}

/// Index of the first maximum (ties go to the earliest), `None` when empty.
pub fn first_argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{weekly_dates, TimeSeries};
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn map(block: MonthBlock) -> SeasonMap {
        SeasonMap::new("d", block)
    }

    #[test]
    fn labels_cycle_from_peak_block() {
        let m = map(MonthBlock::SepNov);
        assert_eq!(m.label(MonthBlock::SepNov), 1);
        assert_eq!(m.label(MonthBlock::DecFeb), 2);
        assert_eq!(m.label(MonthBlock::MarMay), 3);
        assert_eq!(m.label(MonthBlock::JunAug), 4);
        let mut labels: Vec<u8> = m.labels().iter().map(|(_, l)| *l).collect();
        labels.sort();
        assert_eq!(labels, vec![1, 2, 3, 4]);
        for l in 1..=4 {
            assert_eq!(m.label(m.block(l)), l);
        }
    }

    #[test]
    fn segment_majority_and_ties() {
        let m = map(MonthBlock::DecFeb);
        assert_eq!(assign_segment_season(&[11, 12, 12, 12], &m), 1);
        assert_eq!(assign_segment_season(&[2, 2, 3, 3], &m), 1);
        assert_eq!(assign_segment_season(&[6, 7, 7, 8], &m), 3);
        // Nov/Dec tie resolves to Dec-Feb, the first block counting from December.
        assert_eq!(assign_segment_season(&[11, 11, 12, 12], &m), 1);
    }

    fn january_peaking(years: usize) -> DiseaseDataset {
        let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
        let n = years * 52;
        let dates = weekly_dates(start, n);
        let values = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * (t as f64 - 2.0) / 52.0).cos())
            .collect();
        DiseaseDataset::new("flu", vec![TimeSeries::from_dated("flu", "r", dates, values)], true)
    }

    #[test]
    fn january_sinusoid_peaks_in_dec_feb() {
        let m = detect_peak_season(&january_peaking(4)).unwrap();
        assert_eq!(m.peak_season_block, MonthBlock::DecFeb);
        assert_eq!(m.label(MonthBlock::MarMay), 2);
        assert_eq!(m.label(MonthBlock::JunAug), 3);
        assert_eq!(m.label(MonthBlock::SepNov), 4);
    }

    #[test]
    fn non_seasonal_is_rejected() {
        let mut d = january_peaking(1);
        d.seasonal = false;
        assert!(matches!(detect_peak_season(&d), Err(Error::NonSeasonal(_))));
    }

    #[test]
    fn tied_block_counts_pick_earlier_block() {
        // One year peaking in July, one peaking in April: tie between
        // Mar-May and Jun-Aug.
        let start = NaiveDate::from_ymd_opt(2001, 1, 1).unwrap();
        let dates = weekly_dates(start, 104);
        let mut values = vec![0.0; 104];
        values[28] = 5.0; // July 2001
        values[52 + 15] = 5.0; // April 2002
        let d = DiseaseDataset::new("x", vec![TimeSeries::from_dated("x", "r", dates, values)], true);
        assert_eq!(detect_peak_season(&d).unwrap().peak_season_block, MonthBlock::MarMay);
    }

    proptest! {
        #[test]
        fn segment_season_ignores_order(mut months in prop::collection::vec(1u8..=12, 1..12), peak in 0usize..4) {
            let m = map(MonthBlock::from_index(peak));
            let a = assign_segment_season(&months, &m);
            months.reverse();
            prop_assert_eq!(a, assign_segment_season(&months, &m));
            months.sort();
            prop_assert_eq!(a, assign_segment_season(&months, &m));
        }
    }
}
