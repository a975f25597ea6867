//! On-disk path set layout.
//!
//! A path set directory holds
//!
//! * `meta.json`: `format`, `n_paths`, `n_steps`, `spot_len`, `step_dt`, `seed`,
//!   `instruments` (one list per step), `state_dim`, `has_probs` and an
//!   optional `config_digest`;
//! * `spot.f64`: `n_paths x spot_len` little-endian `f64`, row-major by path;
//! * `mids.f64`, `marks.f64`: `n_paths x n_steps x n_instruments`;
//! * `state.f64` (when `state_dim > 0`): `n_paths x n_steps x state_dim`;
//! * `probs.f64` (when `has_probs`): `n_paths` base probabilities.
//!
//! All prices are in units of the initial spot.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InstrumentSpec, PathSet, StateFeatures};
use crate::{Error, Result};

pub const PATHSET_FORMAT: &str = "rnhedge-pathset-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format: String,
    n_paths: usize,
    n_steps: usize,
    spot_len: usize,
    step_dt: f64,
    seed: u64,
    instruments: Vec<Vec<InstrumentSpec>>,
    state_dim: usize,
    has_probs: bool,
    #[serde(default)]
    config_digest: Option<String>,
}

pub fn write_f64s(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() != expected * 8 {
        return Err(Error::Format(format!(
            "{} holds {} bytes, expected {}",
            path.display(),
            buf.len(),
            expected * 8
        )));
    }
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn save(paths: &PathSet, dir: &Path, config_digest: Option<&str>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = Meta {
        format: PATHSET_FORMAT.into(),
        n_paths: paths.n_paths,
        n_steps: paths.n_steps,
        spot_len: paths.spot_len,
        step_dt: paths.step_dt,
        seed: paths.seed,
        instruments: paths.instruments.clone(),
        state_dim: paths.state.as_ref().map_or(0, |s| s.dim),
        has_probs: paths.probs.is_some(),
        config_digest: config_digest.map(str::to_owned),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    write_f64s(&dir.join("spot.f64"), &paths.spot)?;
    write_f64s(&dir.join("mids.f64"), &paths.mids)?;
    write_f64s(&dir.join("marks.f64"), &paths.marks)?;
    if let Some(s) = &paths.state {
        write_f64s(&dir.join("state.f64"), &s.values)?;
    }
    if let Some(p) = &paths.probs {
        write_f64s(&dir.join("probs.f64"), p)?;
    }
    Ok(())
}

pub fn load(dir: &Path) -> Result<PathSet> {
    let meta: Meta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    if meta.format != PATHSET_FORMAT {
        return Err(Error::Format(format!("unknown path set format {}", meta.format)));
    }
    let n = meta.instruments.first().map_or(0, Vec::len);
    let cells = meta.n_paths * meta.n_steps * n;
    let spot = read_f64s(&dir.join("spot.f64"), meta.n_paths * meta.spot_len)?;
    let mids = read_f64s(&dir.join("mids.f64"), cells)?;
    let marks = read_f64s(&dir.join("marks.f64"), cells)?;
    let mut ps = PathSet::new(
        meta.n_paths,
        meta.n_steps,
        meta.step_dt,
        meta.seed,
        meta.spot_len,
        spot,
        meta.instruments,
        mids,
        marks,
    )?;
    if meta.state_dim > 0 {
        let values = read_f64s(
            &dir.join("state.f64"),
            meta.n_paths * meta.n_steps * meta.state_dim,
        )?;
        ps = ps.with_state(StateFeatures {
            dim: meta.state_dim,
            values,
        })?;
    }
    if meta.has_probs {
        let probs = read_f64s(&dir.join("probs.f64"), meta.n_paths)?;
        ps = ps.with_probs(probs)?;
    }
    Ok(ps)
}

/// Long-format CSV: one row per (path, step, instrument).
pub fn export_csv(paths: &PathSet, file: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(file)?;
    w.write_record(["path", "step", "instrument", "spot", "mid", "mark"])?;
    for p in 0..paths.n_paths {
        for t in 0..paths.n_steps {
            for (i, spec) in paths.instruments[t].iter().enumerate() {
                w.write_record([
                    p.to_string(),
                    t.to_string(),
                    spec.id.clone(),
                    paths.spot_at(p, t).to_string(),
                    paths.mid(p, t, i).to_string(),
                    paths.mark(p, t, i).to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
