//! Atomic artifact writes and sidecar metadata.
//!
//! Every command writes its payload atomically (temp file + rename) and a
//! `<artifact>.meta.json` sidecar carrying the effective config, input
//! digests, and summary counts. Timestamps live only in the sidecar so
//! payloads stay byte-identical across reruns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes `bytes` to `path` atomically: a temp file in the same directory
/// is written, flushed, then renamed over the target.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = match dir {
        Some(d) => d.join(format!(".{}.tmp", file_name.to_string_lossy())),
        None => std::path::PathBuf::from(format!(".{}.tmp", file_name.to_string_lossy())),
    };
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// SHA-256 of a file, hex encoded.
pub fn sha256_hex(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub path: String,
    pub sha256: String,
}

/// Sidecar metadata written next to every artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub command: String,
    pub created_unix: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<String, u64>,
}

impl ArtifactMeta {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        ArtifactMeta {
            command: command.to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config,
            inputs: Vec::new(),
            counts: BTreeMap::new(),
        }
    }

    pub fn input(mut self, name: &str, path: impl AsRef<Path>) -> Result<Self> {
        self.inputs.push(InputDigest {
            name: name.to_string(),
            path: path.as_ref().display().to_string(),
            sha256: sha256_hex(&path)?,
        });
        Ok(self)
    }

    pub fn count(mut self, name: &str, value: u64) -> Self {
        self.counts.insert(name.to_string(), value);
        self
    }

    /// Writes the sidecar as `<artifact>.meta.json`.
    pub fn write_for(&self, artifact_path: impl AsRef<Path>) -> Result<()> {
        let p = artifact_path.as_ref();
        let meta_path = p.with_file_name(format!(
            "{}.meta.json",
            p.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
        ));
        let mut payload = serde_json::to_vec_pretty(self)?;
        payload.push(b'\n');
        write_atomic(meta_path, &payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        // no temp litter
        let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn meta_sidecar_lands_next_to_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let artifact = dir.path().join("thing.tsv");
        write_atomic(&artifact, b"x\ty\tz\n").unwrap();
        ArtifactMeta::new("test", serde_json::json!({"k": 1}))
            .input("triples", &artifact)
            .unwrap()
            .count("lines", 1)
            .write_for(&artifact)
            .unwrap();
        let meta = std::fs::read_to_string(dir.path().join("thing.tsv.meta.json")).unwrap();
        assert!(meta.contains("\"command\": \"test\""));
        assert!(meta.contains("sha256"));
    }
}
