//! Subcommand implementations.

pub mod analyze;
pub mod evaluate;
pub mod infer;
pub mod optimize;
pub mod simulate;
pub mod verify_greedy;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Replay manifest written into every run directory: the invocation, the
/// seed, and content hashes of all file inputs.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    seed: Option<u64>,
    inputs: BTreeMap<String, InputHash>,
}

#[derive(Serialize)]
struct InputHash {
    path: String,
    sha256: String,
}

pub fn write_run_manifest(
    out_dir: &Path,
    command: &str,
    seed: Option<u64>,
    inputs: &[(&str, &Path)],
) -> Result<()> {
    let mut hashed = BTreeMap::new();
    for (label, path) in inputs {
        let bytes = fs::read(path)
            .with_context(|| format!("run manifest: cannot hash {}", path.display()))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let digest = hasher.finalize();
        let sha256: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hashed.insert(
            (*label).to_owned(),
            InputHash {
                path: path.display().to_string(),
                sha256,
            },
        );
    }
    let manifest = RunManifest {
        command: command.to_owned(),
        argv: std::env::args().collect(),
        seed,
        inputs: hashed,
    };
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("run_manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
