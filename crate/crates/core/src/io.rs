//! Text formats: dataset and prediction CSVs, the TOML config file and the
//! JSON run report.
//!
//! Floats are written in Rust's shortest round-trip representation, so a
//! write/read cycle reproduces every value bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::MultiSeriesDataset;
use crate::error::{DmpError, Result};
use crate::filter::Prediction;
use crate::inference::{PosteriorSummary, SeriesFit, PriorConfig, Stage1Config, Stage2Config};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvFormat {
    /// `time,series,value`, one row per entry; empty value means missing.
    Long,
    /// `time,<name1>,<name2>,…`; empty cells are missing.
    Wide,
    /// Long when the header is exactly `time,series,value`, wide otherwise.
    Auto,
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| DmpError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| DmpError::io(path, e))
}

fn parse_float(field: &str, line: u64, what: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| DmpError::Parse {
        line,
        message: format!("invalid {what} {field:?}"),
    })?;
    if !v.is_finite() {
        return Err(DmpError::Parse {
            line,
            message: format!("non-finite {what}"),
        });
    }
    Ok(v)
}

fn csv_records(text: &str) -> Result<(Vec<String>, Vec<(u64, csv::StringRecord)>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| DmpError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| DmpError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok((header, rows))
}

/// Parses a dataset from CSV text.
pub fn parse_dataset(text: &str, format: CsvFormat) -> Result<MultiSeriesDataset> {
    let (header, rows) = csv_records(text)?;
    let is_long = header.len() == 3
        && header[0].eq_ignore_ascii_case("time")
        && header[1].eq_ignore_ascii_case("series")
        && header[2].eq_ignore_ascii_case("value");
    match format {
        CsvFormat::Long => parse_long(&header, &rows),
        CsvFormat::Wide => parse_wide(&header, &rows),
        CsvFormat::Auto if is_long => parse_long(&header, &rows),
        CsvFormat::Auto => parse_wide(&header, &rows),
    }
}

fn check_time_order(prev: Option<f64>, t: f64, line: u64, allow_equal: bool) -> Result<()> {
    match prev {
        Some(p) if t < p => Err(DmpError::NonMonotoneTime { line }),
        Some(p) if t == p && !allow_equal => Err(DmpError::DuplicateTimestamp { line }),
        _ => Ok(()),
    }
}

fn parse_wide(header: &[String], rows: &[(u64, csv::StringRecord)]) -> Result<MultiSeriesDataset> {
    if header.len() < 2 || !header[0].eq_ignore_ascii_case("time") {
        return Err(DmpError::Parse {
            line: 1,
            message: "wide header must be `time,<series>,...`".into(),
        });
    }
    let names: Vec<String> = header[1..].to_vec();
    let p = names.len();
    let (mut times, mut values, mut mask) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in rows {
        if rec.len() != p + 1 {
            return Err(DmpError::Parse {
                line: *line,
                message: format!("expected {} fields, found {}", p + 1, rec.len()),
            });
        }
        let t = parse_float(&rec[0], *line, "time")?;
        check_time_order(times.last().copied(), t, *line, false)?;
        let mut row = Vec::with_capacity(p);
        let mut m = Vec::with_capacity(p);
        for field in rec.iter().skip(1) {
            if field.is_empty() {
                row.push(f64::NAN);
                m.push(false);
            } else {
                row.push(parse_float(field, *line, "value")?);
                m.push(true);
            }
        }
        times.push(t);
        values.push(row);
        mask.push(m);
    }
    finish(names, times, values, mask)
}

fn parse_long(header: &[String], rows: &[(u64, csv::StringRecord)]) -> Result<MultiSeriesDataset> {
    if header.len() != 3 {
        return Err(DmpError::Parse {
            line: 1,
            message: "long header must be `time,series,value`".into(),
        });
    }
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut entries: Vec<(f64, usize, Option<f64>, u64)> = Vec::new();
    let mut prev = None;
    for (line, rec) in rows {
        if rec.len() != 3 {
            return Err(DmpError::Parse {
                line: *line,
                message: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let t = parse_float(&rec[0], *line, "time")?;
        check_time_order(prev, t, *line, true)?;
        prev = Some(t);
        let name = rec[1].to_string();
        if name.is_empty() {
            return Err(DmpError::Parse {
                line: *line,
                message: "empty series name".into(),
            });
        }
        let j = *index.entry(name.clone()).or_insert_with(|| {
            names.push(name);
            names.len() - 1
        });
        let v = if rec[2].is_empty() {
            None
        } else {
            Some(parse_float(&rec[2], *line, "value")?)
        };
        entries.push((t, j, v, *line));
    }
    let p = names.len();
    let (mut times, mut values, mut mask): (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<bool>>) = (vec![], vec![], vec![]);
    let mut seen: Vec<Vec<bool>> = Vec::new();
    for (t, j, v, line) in entries {
        if times.last() != Some(&t) {
            times.push(t);
            values.push(vec![f64::NAN; p]);
            mask.push(vec![false; p]);
            seen.push(vec![false; p]);
        }
        let k = times.len() - 1;
        if seen[k][j] {
            return Err(DmpError::DuplicateTimestamp { line });
        }
        seen[k][j] = true;
        if let Some(v) = v {
            values[k][j] = v;
            mask[k][j] = true;
        }
    }
    finish(names, times, values, mask)
}

fn finish(
    names: Vec<String>,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
) -> Result<MultiSeriesDataset> {
    let ds = MultiSeriesDataset::new(names, times, values, mask)?;
    if ds.n_observed() == 0 {
        return Err(DmpError::EmptyData);
    }
    Ok(ds)
}

pub fn read_dataset(path: &Path, format: CsvFormat) -> Result<MultiSeriesDataset> {
    parse_dataset(&read_text(path)?, format)
}

/// Wide CSV with masked entries written as empty cells.
pub fn dataset_to_csv(ds: &MultiSeriesDataset) -> String {
    let mut out = String::from("time");
    for name in ds.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for k in 0..ds.n_times() {
        out.push_str(&fmt_f64(ds.times()[k]));
        for j in 0..ds.n_series() {
            out.push(',');
            if ds.is_observed(k, j) {
                out.push_str(&fmt_f64(ds.value(k, j)));
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(ds: &MultiSeriesDataset, path: &Path) -> Result<()> {
    write_text(path, &dataset_to_csv(ds))
}

pub const PREDICTION_HEADER: &str = "time,series,mean,var_latent,var_predictive,observed_truth";

pub fn predictions_to_csv(preds: &[Prediction], names: &[String]) -> String {
    let mut out = String::from(PREDICTION_HEADER);
    out.push('\n');
    for p in preds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_f64(p.time),
            names.get(p.series).cloned().unwrap_or_else(|| p.series.to_string()),
            fmt_f64(p.mean),
            fmt_f64(p.var_latent),
            fmt_f64(p.var_predictive),
            p.truth.map(fmt_f64).unwrap_or_default()
        );
    }
    out
}

pub fn write_predictions(preds: &[Prediction], names: &[String], path: &Path) -> Result<()> {
    write_text(path, &predictions_to_csv(preds, names))
}

/// Parses a predictions CSV; series names are mapped back through `names`.
pub fn parse_predictions(text: &str, names: &[String]) -> Result<Vec<Prediction>> {
    let (header, rows) = csv_records(text)?;
    if header.join(",") != PREDICTION_HEADER {
        return Err(DmpError::Parse {
            line: 1,
            message: format!("expected header `{PREDICTION_HEADER}`"),
        });
    }
    rows.iter()
        .map(|(line, rec)| {
            if rec.len() != 6 {
                return Err(DmpError::Parse {
                    line: *line,
                    message: "expected 6 fields".into(),
                });
            }
            let series = names.iter().position(|n| n == &rec[1]).ok_or_else(|| DmpError::Parse {
                line: *line,
                message: format!("unknown series {:?}", &rec[1]),
            })?;
            Ok(Prediction {
                time: parse_float(&rec[0], *line, "time")?,
                series,
                mean: parse_float(&rec[2], *line, "mean")?,
                var_latent: parse_float(&rec[3], *line, "var_latent")?,
                var_predictive: parse_float(&rec[4], *line, "var_predictive")?,
                truth: if rec[5].is_empty() {
                    None
                } else {
                    Some(parse_float(&rec[5], *line, "observed_truth")?)
                },
            })
        })
        .collect()
}

pub fn read_predictions(path: &Path, names: &[String]) -> Result<Vec<Prediction>> {
    parse_predictions(&read_text(path)?, names)
}

/// Mean squared error divided by the population variance of the truths.
pub fn compute_smse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(DmpError::validation("SMSE needs non-empty aligned predictions and truths"));
    }
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let var = truth.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(DmpError::DegenerateTruth);
    }
    let mse = predicted.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    Ok(mse / var)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmseReport {
    /// `(series index, SMSE)` for every series with held-out truths.
    pub per_series: Vec<(usize, f64)>,
    /// Average of the per-series values.
    pub average: f64,
}

/// SMSE per output over predictions that carry a truth, averaged across
/// outputs.
pub fn smse_by_series(preds: &[Prediction]) -> Result<SmseReport> {
    let mut series: Vec<usize> = preds.iter().filter(|p| p.truth.is_some()).map(|p| p.series).collect();
    series.sort_unstable();
    series.dedup();
    if series.is_empty() {
        return Err(DmpError::validation("no predictions carry a truth value"));
    }
    let per_series = series
        .iter()
        .map(|&j| {
            let (pred, truth): (Vec<f64>, Vec<f64>) = preds
                .iter()
                .filter(|p| p.series == j)
                .filter_map(|p| p.truth.map(|t| (p.mean, t)))
                .unzip();
            compute_smse(&pred, &truth).map(|s| (j, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let average = per_series.iter().map(|s| s.1).sum::<f64>() / per_series.len() as f64;
    Ok(SmseReport { per_series, average })
}

/// Fraction of truths inside `mean ± 2·sd` of the noisy predictive.
pub fn coverage(preds: &[Prediction]) -> Option<f64> {
    let scored: Vec<bool> = preds
        .iter()
        .filter_map(|p| p.truth.map(|t| (t - p.mean).abs() <= 2.0 * p.var_predictive.sqrt()))
        .collect();
    (!scored.is_empty()).then(|| scored.iter().filter(|&&c| c).count() as f64 / scored.len() as f64)
}

/// Contents of the TOML config file. Unknown keys are errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub priors: PriorConfig,
}

pub fn parse_config(text: &str) -> Result<ConfigFile> {
    let cfg: ConfigFile = toml::from_str(text).map_err(|e| DmpError::Parse {
        line: e
            .span()
            .map(|s| text[..s.start.min(text.len())].lines().count().max(1) as u64)
            .unwrap_or(0),
        message: e.message().to_string(),
    })?;
    cfg.stage2.validate()?;
    cfg.priors.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<(ConfigFile, String)> {
    let text = read_text(path)?;
    Ok((parse_config(&text)?, text))
}

pub fn config_to_toml(cfg: &ConfigFile) -> String {
    toml::to_string(cfg).expect("config is serializable")
}

/// Hex SHA-256 of the canonical serialized config.
pub fn config_hash(cfg: &ConfigFile) -> String {
    let digest = Sha256::digest(config_to_toml(cfg).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    /// First and last timestamp of the input data.
    pub data_time_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub series: String,
    pub ell: f64,
    pub variance: f64,
    pub tau2: f64,
    pub loglik: f64,
    pub weakly_identified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub rank: usize,
    pub chains: usize,
    pub acceptance_rate: Option<f64>,
    pub summary: PosteriorSummary,
    pub last_c: Vec<Vec<f64>>,
    pub last_tau2: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loglik: Option<f64>,
    pub smse: Option<f64>,
    pub smse_per_series: Vec<(String, f64)>,
    pub coverage: Option<f64>,
    pub n_predictions: usize,
}

/// Everything a run produces apart from the prediction table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub provenance: Provenance,
    pub nu: f64,
    pub series: Vec<String>,
    /// Per-series offsets subtracted before modelling.
    pub offsets: Vec<f64>,
    pub fits: Vec<FitRecord>,
    pub posterior: Option<PosteriorRecord>,
    pub metrics: Metrics,
}

impl RunArtifacts {
    pub fn stage1_fits(&self) -> Vec<SeriesFit> {
        self.fits
            .iter()
            .map(|f| SeriesFit {
                ell: f.ell,
                variance: f.variance,
                tau2: f.tau2,
                loglik: f.loglik,
                weakly_identified: f.weakly_identified,
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifacts are serializable");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DmpError::Parse {
            line: e.line() as u64,
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }
}
