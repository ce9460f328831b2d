use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::toml_error;
use crate::data::{weekly_dates, DiseaseEntry, Manifest, DEFAULT_MIN_LENGTH};
use crate::error::{Error, Result};

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date")
}

/// One synthetic disease. Seasonal diseases follow a raised cosine of the
/// given period peaking in `peak_month`; the rest sit at a low baseline
/// with occasional outbreak bumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiseaseSpec {
    pub name: String,
    pub seasonal: bool,
    #[serde(default = "default_period")]
    pub period: usize,
    pub amplitude: f64,
    /// Standard deviation of the additive Gaussian noise.
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "default_month")]
    pub peak_month: u32,
    #[serde(default = "one")]
    pub series: usize,
    pub length: usize,
    #[serde(default = "one_f")]
    pub baseline: f64,
    /// Weekly chance of an outbreak starting (non-seasonal only).
    #[serde(default = "default_outbreak_rate")]
    pub outbreak_rate: f64,
    #[serde(default)]
    pub pretrain_cutoff: Option<NaiveDate>,
}

fn default_period() -> usize {
    52
}
fn default_month() -> u32 {
    1
}
fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn default_outbreak_rate() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    /// Date of the first week.
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    #[serde(rename = "disease")]
    pub diseases: Vec<DiseaseSpec>,
}

impl SyntheticCorpusSpec {
    pub fn load(path: &Path) -> Result<SyntheticCorpusSpec> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SyntheticCorpusSpec = toml::from_str(&text).map_err(|e| toml_error(path, &text, &e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.diseases.is_empty() {
            return Err(Error::Config("synthetic corpus needs at least one disease".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.diseases {
            let bad = |m: String| Err(Error::Config(format!("disease `{}`: {m}", d.name)));
            if !seen.insert(&d.name) || d.name.is_empty() || d.name.contains([',', '/', '\\']) {
                return bad("name must be unique and usable as a file name".into());
            }
            if d.period < 4 {
                return bad(format!("period {} is below 4", d.period));
            }
            if d.length < d.period {
                return bad(format!("length {} is shorter than the period", d.length));
            }
            if !(d.noise >= 0.0) || !d.amplitude.is_finite() || !d.baseline.is_finite() {
                return bad("noise must be non-negative and amplitude/baseline finite".into());
            }
            if !(1..=12).contains(&d.peak_month) {
                return bad(format!("peak month {} out of range", d.peak_month));
            }
            if d.series == 0 {
                return bad("series count must be positive".into());
            }
            if !(0.0..=1.0).contains(&d.outbreak_rate) {
                return bad("outbreak_rate must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}

/// Index of the first week falling in the middle of `month`.
fn first_peak(dates: &[NaiveDate], month: u32) -> usize {
    dates
        .iter()
        .position(|d| d.month() == month && (8..=22).contains(&d.day()))
        .unwrap_or(0)
}

fn seasonal_series(d: &DiseaseSpec, dates: &[NaiveDate], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let scale = rng.random_range(0.75..1.25);
    let level = d.baseline * rng.random_range(0.8..1.2);
    let peak = first_peak(dates, d.peak_month) as f64;
    let noise = Normal::new(0.0, d.noise).expect("validated noise");
    (0..dates.len())
        .map(|t| {
            let phase = 2.0 * PI * (t as f64 - peak) / d.period as f64;
            let clean = level + d.amplitude * scale * 0.5 * (1.0 + phase.cos());
            if d.noise > 0.0 {
                (clean + noise.sample(rng)).max(0.0)
            } else {
                clean
            }
        })
        .collect()
}

fn outbreak_series(d: &DiseaseSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v = vec![d.baseline; n];
    for t in 0..n {
        if rng.random_bool(d.outbreak_rate) {
            let height = d.amplitude * rng.random_range(0.5..1.5);
            let width = rng.random_range(1.0..3.0);
            for (u, x) in v.iter_mut().enumerate() {
                let z = (u as f64 - t as f64) / width;
                *x += height * (-0.5 * z * z).exp();
            }
        }
    }
    if d.noise > 0.0 {
        let noise = Normal::new(0.0, d.noise).expect("validated noise");
        for x in &mut v {
            *x = (*x + noise.sample(rng)).max(0.0);
        }
    }
    v
}

/// Writes one CSV per disease plus a `manifest.toml` into `out_dir` and
/// returns the manifest path. Same spec and seed give identical bytes.
pub fn generate_synthetic(spec: &SyntheticCorpusSpec, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = Manifest {
        files: Vec::new(),
        diseases: BTreeMap::new(),
        min_length: DEFAULT_MIN_LENGTH,
    };
    for (i, d) in spec.diseases.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let dates = weekly_dates(spec.start, d.length);
        let mut csv = String::from("disease,region,date,value\n");
        for r in 0..d.series {
            let values = if d.seasonal {
                seasonal_series(d, &dates, &mut rng)
            } else {
                outbreak_series(d, d.length, &mut rng)
            };
            for (date, v) in dates.iter().zip(values) {
                writeln!(csv, "{},r{r},{},{v:.6}", d.name, date.format("%Y-%m-%d")).expect("string write");
            }
        }
        let file = PathBuf::from(format!("{}.csv", d.name));
        let path = out_dir.join(&file);
        std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        manifest.files.push(file);
        manifest.diseases.insert(
            d.name.clone(),
            DiseaseEntry {
                seasonal: d.seasonal,
                pretrain_cutoff: d.pretrain_cutoff,
            },
        );
    }
    let path = out_dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{detect_peak_season, load_corpus, MonthBlock};

    fn disease(name: &str, seasonal: bool, month: u32, noise: f64) -> DiseaseSpec {
        DiseaseSpec {
            name: name.into(),
            seasonal,
            period: 52,
            amplitude: 10.0,
            noise,
            peak_month: month,
            series: 2,
            length: 520,
            baseline: 1.0,
            outbreak_rate: 0.02,
            pretrain_cutoff: None,
        }
    }

    fn spec(diseases: Vec<DiseaseSpec>) -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            start: default_start(),
            diseases,
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = spec(vec![disease("flu", true, 1, 0.5), disease("typhoid", false, 1, 0.1)]);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_synthetic(&s, 7, a.path()).unwrap();
        generate_synthetic(&s, 7, b.path()).unwrap();
        for f in ["flu.csv", "typhoid.csv", "manifest.toml"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
        let c = tempfile::tempdir().unwrap();
        generate_synthetic(&s, 8, c.path()).unwrap();
        assert_ne!(
            std::fs::read(a.path().join("flu.csv")).unwrap(),
            std::fs::read(c.path().join("flu.csv")).unwrap()
        );
    }

    #[test]
    fn noiseless_seasonal_is_an_exact_cosine() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(&spec(vec![disease("flu", true, 1, 0.0)]), 1, dir.path()).unwrap();
        let (_, ds) = load_corpus(m).unwrap();
        let v = &ds[0].series[0].values;
        for t in 0..v.len() - 52 {
            assert!((v[t] - v[t + 52]).abs() < 2e-6);
        }
        // second difference of a cosine is proportional to its centred value
        let mid = (v.iter().cloned().fold(f64::MIN, f64::max) + v.iter().cloned().fold(f64::MAX, f64::min)) / 2.0;
        let c = 2.0 * (1.0 - (2.0 * PI / 52.0).cos());
        for t in 1..v.len() - 1 {
            let d2 = v[t - 1] - 2.0 * v[t] + v[t + 1];
            assert!((d2 + c * (v[t] - mid)).abs() < 1e-4, "t = {t}");
        }
    }

    /// Tally of yearly argmax blocks computed independently of the library.
    fn oracle_block(values: &[f64], months: &[u8]) -> usize {
        let mut tally = [0usize; 4];
        for year in 0..values.len() / 52 {
            let y = &values[year * 52..year * 52 + 52];
            let mut best = 0;
            for i in 1..52 {
                if y[i] > y[best] {
                    best = i;
                }
            }
            tally[(months[year * 52 + best] as usize % 12) / 3] += 1;
        }
        let mut b = 0;
        for i in 1..4 {
            if tally[i] > tally[b] {
                b = i;
            }
        }
        b
    }

    #[test]
    fn peak_month_is_recovered() {
        for (month, block) in [(1, MonthBlock::DecFeb), (4, MonthBlock::MarMay), (7, MonthBlock::JunAug), (10, MonthBlock::SepNov)] {
            let dir = tempfile::tempdir().unwrap();
            let mut d = disease("flu", true, month, 0.3);
            d.series = 1;
            let m = generate_synthetic(&spec(vec![d]), month as u64, dir.path()).unwrap();
            let (_, ds) = load_corpus(m).unwrap();
            let s = &ds[0].series[0];
            assert_eq!(oracle_block(&s.values, &s.month_stamps), block.index());
            assert_eq!(detect_peak_season(&ds[0]).unwrap().peak_season_block, block);
        }
    }

    #[test]
    fn non_seasonal_stays_low_with_bumps() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic(&spec(vec![disease("typhoid", false, 1, 0.0)]), 3, dir.path()).unwrap();
        let (man, ds) = load_corpus(m).unwrap();
        assert!(!man.diseases["typhoid"].seasonal);
        let v = &ds[0].series[0].values;
        let near_base = v.iter().filter(|&&x| x < 1.5).count();
        assert!(near_base > v.len() / 2);
        assert!(v.iter().any(|&x| x > 4.0));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut d = disease("flu", true, 1, 0.0);
        d.period = 3;
        assert!(spec(vec![d.clone()]).validate().is_err());
        d.period = 52;
        d.length = 40;
        assert!(spec(vec![d.clone()]).validate().is_err());
        d.length = 100;
        d.noise = -1.0;
        assert!(spec(vec![d]).validate().is_err());
        assert!(spec(vec![disease("a", true, 1, 0.0), disease("a", true, 2, 0.0)]).validate().is_err());
    }

    #[test]
    fn spec_parses_from_toml() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        std::fs::write(&p, "[[disease]]\nname = \"flu\"\nseasonal = true\namplitude = 3.0\nlength = 104\n").unwrap();
        let s = SyntheticCorpusSpec::load(&p).unwrap();
        assert_eq!(s.diseases[0].period, 52);
        std::fs::write(&p, "[[disease]]\nname = \"flu\"\nseasonal = true\namplitude = 3.0\nlength = 104\ncolour = 1\n").unwrap();
        match SyntheticCorpusSpec::load(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
    }
}
