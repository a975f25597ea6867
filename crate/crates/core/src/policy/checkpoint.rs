//! Policy checkpoints.
//!
//! Layout: the line `rnhedge-policy v1`, one line of JSON describing the
//! architecture, feature map, heads, projection, parameter count and RNG
//! position, then the parameters as raw little-endian `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Arch, FeatureMap, Head, PolicyNet, Projection};
use crate::{Error, Result};

const MAGIC: &str = "rnhedge-policy v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    arch: Arch,
    features: FeatureMap,
    heads: Vec<Head>,
    projection: Projection,
    init_seed: u64,
    n_params: usize,
    rng: RngState,
    config_digest: Option<String>,
}

pub fn save_checkpoint(
    net: &PolicyNet,
    rng: RngState,
    config_digest: Option<&str>,
    path: &Path,
) -> Result<()> {
    let desc = Descriptor {
        arch: net.arch.clone(),
        features: net.features.clone(),
        heads: net.heads.clone(),
        projection: net.projection.clone(),
        init_seed: net.init_seed,
        n_params: net.params.len(),
        rng,
        config_digest: config_digest.map(str::to_owned),
    };
    let mut f = std::io::BufWriter::new(File::create(path)?);
    writeln!(f, "{MAGIC}")?;
    writeln!(f, "{}", serde_json::to_string(&desc)?)?;
    for p in &net.params {
        f.write_all(&p.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyNet, RngState)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::Format(format!("{}: not a policy checkpoint", path.display())));
    }
    line.clear();
    r.read_line(&mut line)?;
    let desc: Descriptor = serde_json::from_str(&line)?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != desc.n_params * 8 {
        return Err(Error::Format(format!(
            "{}: {} parameter bytes, expected {}",
            path.display(),
            bytes.len(),
            desc.n_params * 8
        )));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let expect = desc.arch.n_params(desc.features.dim(), desc.heads.len());
    if expect != params.len() {
        return Err(Error::Format(format!(
            "architecture needs {expect} parameters, checkpoint holds {}",
            params.len()
        )));
    }
    let net = PolicyNet {
        arch: desc.arch,
        features: desc.features,
        heads: desc.heads,
        projection: desc.projection,
        params,
        init_seed: desc.init_seed,
    };
    Ok((net, desc.rng))
}
