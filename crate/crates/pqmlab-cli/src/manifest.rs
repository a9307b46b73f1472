//! Stage manifests: every pipeline stage records the content digests of the
//! files it read and wrote, so any report can be traced to exact inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub stage: String,
    pub seed: u64,
    pub config_digest: String,
    /// File name -> sha256, for files the stage consumed.
    pub inputs: BTreeMap<String, String>,
    /// File name -> sha256, for files the stage produced.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn new(stage: &str, seed: u64, config_digest: String) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            stage: stage.to_string(),
            seed,
            config_digest,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn record_input(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        let digest = file_digest(&dir.join(name))?;
        self.inputs.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn record_output(&mut self, dir: &Path, name: &str) -> Result<(), CliError> {
        let digest = file_digest(&dir.join(name))?;
        self.outputs.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(format!("manifest_{}.json", self.stage));
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Config(format!("manifest encode: {e}")))?;
        fs::write(&path, text)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Re-hash every file referenced by every `manifest_*.json` in the output
/// directory. Returns the mismatches as (manifest stage, file, expected,
/// found-or-missing).
pub fn verify_dir(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut problems = Vec::new();
    let mut manifests = Vec::new();
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", dir.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Config(format!("read_dir: {e}")))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if name.starts_with("manifest_") && name.ends_with(".json") {
            manifests.push(entry.path());
        }
    }
    manifests.sort();
    if manifests.is_empty() {
        return Err(CliError::Config(format!(
            "no manifest_*.json files found in {}",
            dir.display()
        )));
    }
    for path in manifests {
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for (kind, map) in [("input", &manifest.inputs), ("output", &manifest.outputs)] {
            for (name, expected) in map {
                let file = dir.join(name);
                match fs::read(&file) {
                    Ok(bytes) => {
                        let found = sha256_hex(&bytes);
                        if &found != expected {
                            problems.push(format!(
                                "{} {kind} {name}: digest {found} != recorded {expected}",
                                manifest.stage
                            ));
                        }
                    }
                    Err(e) => problems.push(format!(
                        "{} {kind} {name}: unreadable ({e})",
                        manifest.stage
                    )),
                }
            }
        }
    }
    Ok(problems)
}
