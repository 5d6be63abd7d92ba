//! Scan records and their CSV form.
//!
//! ```text
//! # seed = 7
//! # config_hash = 3f2a…
//! # variable = detuning_mhz
//! series,scan_value,p,err,N
//! red,-1.2,0.084,0.017553,250
//! ```
//!
//! The `series` column is present only when a record has named series.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::write_atomic;

/// `√(p(1−p)/N)`.
pub fn projection_noise(p: f64, n: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || n == 0 {
        return Err(invalid(format!("projection noise needs 0 ≤ p ≤ 1 and N ≥ 1, got p={p}, N={n}")));
    }
    Ok((p * (1.0 - p) / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordPoint {
    pub series: String,
    pub value: f64,
    /// Per-shot outcomes (D detected); empty for records read from CSV.
    pub shots: Vec<bool>,
    pub p: f64,
    pub err: f64,
    pub n: usize,
}

impl RecordPoint {
    pub fn from_shots(series: impl Into<String>, value: f64, shots: Vec<bool>) -> Result<Self> {
        let n = shots.len();
        let hits = shots.iter().filter(|&&s| s).count();
        if n == 0 {
            return Err(invalid("a record point needs at least one shot"));
        }
        let p = hits as f64 / n as f64;
        Ok(Self { series: series.into(), value, shots, p, err: projection_noise(p, n)?, n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    /// Scanned quantity with unit suffix, e.g. `detuning_mhz`.
    pub variable: String,
    pub seed: u64,
    pub config_hash: String,
    pub points: Vec<RecordPoint>,
}

#[derive(Deserialize)]
struct Row {
    #[serde(default)]
    series: Option<String>,
    scan_value: f64,
    p: f64,
    err: f64,
    #[serde(rename = "N")]
    n: usize,
}

/// Sidecar written next to every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub seed: u64,
    pub config_hash: String,
    pub variable: String,
    pub points: usize,
    pub shots: usize,
}

impl ExperimentRecord {
    pub fn has_series(&self) -> bool {
        self.points.iter().any(|p| !p.series.is_empty())
    }

    /// Series names in order of first appearance.
    pub fn series_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for p in &self.points {
            if !names.contains(&p.series) {
                names.push(p.series.clone());
            }
        }
        names
    }

    pub fn series<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a RecordPoint> + 'a {
        self.points.iter().filter(move |p| p.series == name)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out =
            format!("# seed = {}\n# config_hash = {}\n# variable = {}\n", self.seed, self.config_hash, self.variable);
        let named = self.has_series();
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let header: &[&str] =
            if named { &["series", "scan_value", "p", "err", "N"] } else { &["scan_value", "p", "err", "N"] };
        w.write_record(header).map_err(csv_err)?;
        for p in &self.points {
            let mut row = vec![p.value.to_string(), p.p.to_string(), p.err.to_string(), p.n.to_string()];
            if named {
                row.insert(0, p.series.clone());
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
        out.push_str(&String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))?);
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut seed = 0;
        let mut config_hash = String::new();
        let mut variable = String::new();
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some((k, v)) = line.trim_start_matches('#').split_once('=') {
                match k.trim() {
                    "seed" => seed = v.trim().parse().map_err(|_| invalid(format!("bad seed line: {line}")))?,
                    "config_hash" => config_hash = v.trim().to_string(),
                    "variable" => variable = v.trim().to_string(),
                    _ => {}
                }
            }
        }
        let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let mut points = Vec::new();
        for row in r.deserialize::<Row>() {
            let row = row.map_err(csv_err)?;
            if !(0.0..=1.0).contains(&row.p) || row.n == 0 {
                return Err(invalid(format!("record row at {} has p={} N={}", row.scan_value, row.p, row.n)));
            }
            points.push(RecordPoint {
                series: row.series.unwrap_or_default(),
                value: row.scan_value,
                shots: Vec::new(),
                p: row.p,
                err: row.err,
                n: row.n,
            });
        }
        if points.is_empty() {
            return Err(invalid("record holds no data rows"));
        }
        Ok(Self { variable, seed, config_hash, points })
    }

    pub fn meta(&self) -> RecordMeta {
        RecordMeta {
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            variable: self.variable.clone(),
            points: self.points.len(),
            shots: self.points.iter().map(|p| p.n).sum(),
        }
    }

    /// Writes `path` and `path.meta.toml` atomically.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())?;
        let meta = toml::to_string(&self.meta()).map_err(|e| invalid(e.to_string()))?;
        write_atomic(&meta_path(path), meta.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }
}

/// `out.csv` → `out.csv.meta.toml`.
pub fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.toml");
    s.into()
}

fn csv_err(e: csv::Error) -> Error {
    invalid(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(named: bool) -> ExperimentRecord {
        let mk = |s: &str, v: f64, hits: usize| {
            let shots = (0..100).map(|i| i < hits).collect();
            RecordPoint::from_shots(if named { s } else { "" }, v, shots).unwrap()
        };
        ExperimentRecord {
            variable: "detuning_mhz".into(),
            seed: 42,
            config_hash: "abc".into(),
            points: vec![mk("red", -1.2, 9), mk("blue", 1.2, 50), mk("blue", 1.25, 100)],
        }
    }

    #[test]
    fn error_bars() {
        assert_eq!(projection_noise(0.0, 10).unwrap(), 0.0);
        assert_eq!(projection_noise(1.0, 10).unwrap(), 0.0);
        assert!((projection_noise(0.5, 100).unwrap() - 0.05).abs() < 1e-15);
        assert!(projection_noise(1.5, 10).is_err());
        assert!(projection_noise(0.5, 0).is_err());
        let p = &sample(false).points[1];
        assert_eq!(p.err, 0.05);
    }

    #[test]
    fn csv_roundtrip() {
        for named in [false, true] {
            let rec = sample(named);
            let text = rec.to_csv().unwrap();
            assert!(text.contains(if named { "series,scan_value,p,err,N" } else { "\nscan_value,p,err,N" }));
            let back = ExperimentRecord::from_csv(&text).unwrap();
            assert_eq!(back.seed, 42);
            assert_eq!(back.variable, "detuning_mhz");
            assert_eq!(back.points.len(), 3);
            for (a, b) in rec.points.iter().zip(&back.points) {
                assert_eq!((a.value, a.p, a.err, a.n, &a.series), (b.value, b.p, b.err, b.n, &b.series));
            }
            assert_eq!(back.to_csv().unwrap(), text);
        }
    }

    #[test]
    fn empty_record_rejected() {
        assert!(ExperimentRecord::from_csv("# seed = 1\nscan_value,p,err,N\n").is_err());
    }

    #[test]
    fn save_writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        sample(true).save(&path).unwrap();
        let meta: RecordMeta = toml::from_str(&std::fs::read_to_string(meta_path(&path)).unwrap()).unwrap();
        assert_eq!(meta.shots, 300);
        assert_eq!(ExperimentRecord::load(&path).unwrap().points.len(), 3);
    }
}
