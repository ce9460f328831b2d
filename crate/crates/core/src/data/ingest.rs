use std::collections::{BTreeSet, HashMap};
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{DiseaseDataset, TimeSeries};
use crate::error::{Error, Result};

#[derive(Debug, Deserialize)]
struct Row {
    disease: String,
    region: String,
    date: String,
    value: String,
}

/// Reads a `disease,region,date,value` CSV file and groups it into datasets.
///
/// Datasets appear in order of first appearance; series inside a dataset
/// likewise. Rows of a series are sorted by date. A series containing a
/// non-finite value is dropped with a warning.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<DiseaseDataset>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, path)
}

/// Same as [`load_csv`] over any reader; `path` is only used in messages.
pub fn read_csv(reader: impl Read, path: &Path) -> Result<Vec<DiseaseDataset>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut order: Vec<(String, String)> = Vec::new();
    let mut rows: HashMap<(String, String), Vec<(NaiveDate, f64)>> = HashMap::new();
    let mut poisoned: BTreeSet<(String, String)> = BTreeSet::new();

    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: Row = record
            .deserialize(None)
            .map_err(|e| parse_err(line, e.to_string()))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| parse_err(line, format!("bad date `{}`: {e}", row.date)))?;
        let value: f64 = row
            .value
            .parse()
            .map_err(|e| parse_err(line, format!("bad value `{}`: {e}", row.value)))?;
        let key = (row.disease, row.region);
        if !value.is_finite() {
            if poisoned.insert(key.clone()) {
                log::warn!(
                    "{}:{line}: non-finite value for {}/{}; dropping series",
                    path.display(),
                    key.0,
                    key.1
                );
            }
            continue;
        }
        let entry = rows.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        entry.push((date, value));
    }

    let mut datasets: Vec<DiseaseDataset> = Vec::new();
    for key in order {
        if poisoned.contains(&key) {
            continue;
        }
        let mut obs = rows.remove(&key).unwrap_or_default();
        obs.sort_by_key(|(d, _)| *d);
        let (dates, values) = obs.into_iter().unzip();
        let series = TimeSeries::from_dated(key.0.clone(), key.1, dates, values);
        match datasets.iter_mut().find(|d| d.name == key.0) {
            Some(d) => d.series.push(series),
            None => datasets.push(DiseaseDataset::new(key.0, vec![series], false)),
        }
    }
    Ok(datasets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<Vec<DiseaseDataset>> {
        read_csv(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn three_rows_one_series() {
        let ds = read(
            "disease,region,date,value\nflu,us,2020-01-06,1.5\nflu,us,2020-01-13,2\nflu,us,2020-01-20,3.25\n",
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].series.len(), 1);
        assert_eq!(ds[0].series[0].values, vec![1.5, 2.0, 3.25]);
        assert_eq!(ds[0].series[0].month_stamps, vec![1, 1, 1]);
    }

    #[test]
    fn empty_input_is_empty_collection() {
        assert!(read("").unwrap().is_empty());
        assert!(read("disease,region,date,value\n").unwrap().is_empty());
    }

    #[test]
    fn nan_drops_series_only() {
        let ds = read(
            "disease,region,date,value\nflu,a,2020-01-06,1\nflu,a,2020-01-13,NaN\nflu,b,2020-01-06,4\n",
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].series.len(), 1);
        assert_eq!(ds[0].series[0].region, "b");
    }

    #[test]
    fn malformed_row_names_line() {
        let err = read("disease,region,date,value\nflu,a,2020-01-06,1\nflu,a,2020-13-45,2\n")
            .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = read("disease,region,date,value\nflu,a,2020-01-06,abc\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn groups_by_disease_and_sorts_dates() {
        let ds = read(
            "disease,region,date,value\nb,x,2020-02-03,2\na,y,2020-01-06,1\nb,x,2020-01-27,1\n",
        )
        .unwrap();
        assert_eq!(ds.iter().map(|d| d.name.as_str()).collect::<Vec<_>>(), ["b", "a"]);
        assert_eq!(ds[0].series[0].values, vec![1.0, 2.0]);
        assert_eq!(ds[0].series[0].month_stamps, vec![1, 2]);
    }
}
