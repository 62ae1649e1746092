//! Initialization files: raw little-endian `f64` values plus a JSON sidecar.

use std::path::{Path, PathBuf};

use amaml_core::model::MlpSpec;
use anyhow::{ensure, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaMeta {
    pub d: usize,
    pub spec_hash: String,
    pub seed: u64,
    pub layer_sizes: Vec<usize>,
    pub algorithm: String,
    pub meta_iters: usize,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

pub fn write(bin: &Path, theta: &[f64], meta: &ThetaMeta) -> Result<()> {
    ensure!(
        theta.len() == meta.d,
        "sidecar d {} != {} values",
        meta.d,
        theta.len()
    );
    let bytes: Vec<u8> = theta.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(bin, bytes).with_context(|| format!("writing {}", bin.display()))?;
    let side = sidecar_path(bin);
    std::fs::write(&side, serde_json::to_string_pretty(meta)? + "\n")
        .with_context(|| format!("writing {}", side.display()))?;
    Ok(())
}

pub fn read(bin: &Path) -> Result<(Vec<f64>, ThetaMeta)> {
    let bytes = std::fs::read(bin).with_context(|| format!("reading {}", bin.display()))?;
    let side = sidecar_path(bin);
    let meta: ThetaMeta = serde_json::from_str(
        &std::fs::read_to_string(&side).with_context(|| format!("reading {}", side.display()))?,
    )
    .with_context(|| format!("parsing {}", side.display()))?;
    ensure!(
        bytes.len() == 8 * meta.d,
        "{} holds {} bytes, sidecar says d = {}",
        bin.display(),
        bytes.len(),
        meta.d
    );
    let theta = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((theta, meta))
}

/// Rejects an initialization trained for a different network.
pub fn check_compatible(meta: &ThetaMeta, spec: &MlpSpec) -> Result<()> {
    let hash = spec.spec_hash();
    ensure!(
        meta.spec_hash == hash && meta.d == spec.param_count(),
        "initialization was trained for network {:?} (hash {}, d = {}) but the config describes {:?} (hash {hash}, d = {})",
        meta.layer_sizes,
        meta.spec_hash,
        meta.d,
        spec.layer_sizes,
        spec.param_count()
    );
    Ok(())
}
