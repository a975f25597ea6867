//! Artifact files and the CSV exports built from them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::market::io::{read_f64s, write_f64s};
use crate::measure::StatArbReport;
use crate::{stats, Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const REPORT_JSON: &str = "report.json";
pub const WEIGHTS: &str = "weights.f64";
pub const WEIGHTS_META: &str = "weights.json";
pub const GAINS: &str = "gains.f64";
pub const CHECKPOINT: &str = "policy.ckpt";
pub const SUMMARY: &str = "summary.txt";
pub const FAILED: &str = "FAILED";

pub const METRICS_CSV: &str = "metrics.csv";
pub const BAND_CSV: &str = "band.csv";
pub const WEIGHTS_HIST_CSV: &str = "weights_hist.csv";

pub const HIST_LEVELS: [f64; 13] = [0.0, 0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 0.999, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub digest: String,
    pub world: String,
    pub config: serde_json::Value,
}

/// Validation metrics at one evaluation point. Metrics without an analytic
/// reference in the chosen world are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub density_mse: Option<f64>,
    pub rel_entropy: f64,
    pub option_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub n_paths: usize,
    pub log_normalizer: f64,
    pub ess: f64,
    pub config_digest: Option<String>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// CSV writer whose first line is `# digest: <digest>`.
pub fn csv_with_digest(path: &Path, digest: Option<&str>) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(File::create(path)?);
    if let Some(d) = digest {
        writeln!(f, "# digest: {d}")?;
    }
    Ok(csv::Writer::from_writer(f))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow], digest: Option<&str>) -> Result<()> {
    let mut w = csv_with_digest(path, digest)?;
    w.write_record(["step", "density_mse", "rel_entropy", "option_mse"])?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            opt(r.density_mse),
            r.rel_entropy.to_string(),
            opt(r.option_mse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_weights_hist_csv(path: &Path, q: &[f64], digest: Option<&str>) -> Result<()> {
    let mut w = csv_with_digest(path, digest)?;
    w.write_record(["level", "weight"])?;
    if !q.is_empty() {
        let mut s = q.to_vec();
        s.sort_by(f64::total_cmp);
        for l in HIST_LEVELS {
            w.write_record([l.to_string(), stats::quantile(&s, l).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_weights(dir: &Path, q: &[f64], gains: &[f64], meta: &WeightsMeta) -> Result<()> {
    write_f64s(&dir.join(WEIGHTS), q)?;
    write_f64s(&dir.join(GAINS), gains)?;
    write_json(&dir.join(WEIGHTS_META), meta)
}

pub fn read_weights(dir: &Path) -> Result<(Vec<f64>, WeightsMeta)> {
    let meta: WeightsMeta = read_json(&dir.join(WEIGHTS_META))?;
    let q = read_f64s(&dir.join(WEIGHTS), meta.n_paths)?;
    Ok((q, meta))
}

/// Regenerate `metrics.csv`, `band.csv` and `weights_hist.csv` in `dir` from
/// the JSON and binary artifacts. Missing sources give header-only files and
/// are returned by name.
pub fn metrics_export(dir: &Path) -> Result<Vec<String>> {
    let mut missing = Vec::new();
    let manifest: Option<Manifest> = match dir.join(MANIFEST).exists() {
        true => Some(read_json(&dir.join(MANIFEST))?),
        false => {
            missing.push(MANIFEST.to_string());
            None
        }
    };
    let digest = manifest.as_ref().map(|m| m.digest.as_str());

    let rows: Vec<MetricsRow> = if dir.join(METRICS_JSON).exists() {
        read_json(&dir.join(METRICS_JSON))?
    } else {
        missing.push(METRICS_JSON.to_string());
        Vec::new()
    };
    write_metrics_csv(&dir.join(METRICS_CSV), &rows, digest)?;

    let report = if dir.join(REPORT_JSON).exists() {
        read_json(&dir.join(REPORT_JSON))?
    } else {
        missing.push(REPORT_JSON.to_string());
        StatArbReport {
            cells: Vec::new(),
            ess: 0.0,
            unreliable: false,
            retrain: None,
            pass: false,
        }
    };
    report.write_csv(BufWriter::new(File::create(dir.join(BAND_CSV))?), digest)?;

    let q = if dir.join(WEIGHTS_META).exists() {
        read_weights(dir)?.0
    } else {
        missing.push(WEIGHTS.to_string());
        Vec::new()
    };
    write_weights_hist_csv(&dir.join(WEIGHTS_HIST_CSV), &q, digest)?;
    Ok(missing)
}
