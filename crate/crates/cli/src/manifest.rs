//! Run manifest: what was run, from which inputs, and hashes of everything written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct Manifest {
    command: String,
    config: Option<PathBuf>,
    seed: u64,
    output_dir: PathBuf,
    created_unix: u64,
    /// SHA-256 of the inputs (config, weights) and of every artifact, keyed by path.
    inputs: BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
}

fn sha256(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

impl Manifest {
    pub fn new(command: &str, config: Option<&Path>, seed: u64, dir: &Path) -> Self {
        let mut m = Self {
            command: command.to_string(),
            config: config.map(Path::to_path_buf),
            seed,
            output_dir: dir.to_path_buf(),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        };
        if let Some(c) = config {
            if let Ok(h) = sha256(c) {
                m.inputs.insert(c.display().to_string(), h);
            }
        }
        m
    }

    pub fn inputs(&mut self, paths: &[&Path]) -> std::io::Result<()> {
        for p in paths {
            self.inputs.insert(p.display().to_string(), sha256(p)?);
        }
        Ok(())
    }

    pub fn artifacts(&mut self, paths: &[&Path]) -> std::io::Result<()> {
        for p in paths {
            let name = p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned());
            self.artifacts.insert(name, sha256(p)?);
        }
        Ok(())
    }

    /// Writes `manifest.json`; call after every artifact exists.
    pub fn write(&self) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(self.output_dir.join("manifest.json"), text + "\n")
    }
}
