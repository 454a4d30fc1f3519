//! Run manifests and atomic file writes.
//!
//! Every mutating CLI command records what it ran and what it touched:
//! the binary version, the subcommand, the fully resolved argument map, and
//! sha256 checksums of each input and output file. `replay` re-executes the
//! stored command and compares the fresh checksums against the recorded
//! ones, so a manifest doubles as a reproducibility receipt.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

const MANIFEST_VERSION: u32 = 1;

/// Write `bytes` to `path` through a temporary file in the same directory
/// followed by a rename, so readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    let mut tmp = match dir {
        Some(d) => tempfile::NamedTempFile::new_in(d),
        None => tempfile::NamedTempFile::new_in("."),
    }
    .map_err(|e| Error::io(path.display().to_string(), e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path.display().to_string(), e))?;
    tmp.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path.display().to_string(), e.error))?;
    Ok(())
}

/// Hex-encoded sha256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(sha256_bytes(&bytes))
}

/// Hex-encoded sha256 of a byte slice.
pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Checksum record for one file involved in a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

/// A reproducibility receipt for one CLI invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    /// Subcommand name, e.g. `train`.
    pub command: String,
    /// Fully resolved arguments after config-file merging, keyed by flag
    /// name. Sorted keys keep the serialized form canonical.
    pub args: BTreeMap<String, String>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

impl RunManifest {
    pub fn new(command: &str, args: BTreeMap<String, String>) -> Self {
        RunManifest {
            format_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord {
            path: path.to_string_lossy().into_owned(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileRecord {
            path: path.to_string_lossy().into_owned(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let m: RunManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }

    /// Compare the recorded output checksums against the files currently on
    /// disk (resolved relative to `base` when the stored paths are
    /// relative). Returns the list of mismatch descriptions; empty means
    /// the replay reproduced every output bit for bit.
    pub fn verify_outputs(&self, base: Option<&Path>) -> Result<Vec<String>> {
        let mut mismatches = Vec::new();
        for rec in &self.outputs {
            let p = PathBuf::from(&rec.path);
            let resolved = match (p.is_relative(), base) {
                (true, Some(b)) => b.join(&p),
                _ => p,
            };
            let actual = sha256_file(&resolved)?;
            if actual != rec.sha256 {
                mismatches.push(format!(
                    "{}: recorded {} got {}",
                    rec.path, rec.sha256, actual
                ));
            }
        }
        Ok(mismatches)
    }
}
