use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{config_hash, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        })
    }
}

/// Provenance record written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_sha256: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

/// `<artifact>.manifest.json`.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

/// Hashes inputs and artifacts and writes the manifest beside the first artifact.
pub fn write_manifest(
    command: &str,
    config: &Value,
    seeds: Vec<u64>,
    inputs: &[&Path],
    artifacts: &[&Path],
) -> Result<PathBuf> {
    let manifest = RunManifest {
        command: command.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_hash(config),
        config: config.clone(),
        seeds,
        inputs: inputs
            .iter()
            .map(|p| FileDigest::of(p))
            .collect::<Result<_>>()?,
        artifacts: artifacts
            .iter()
            .map(|p| FileDigest::of(p))
            .collect::<Result<_>>()?,
    };
    let path = manifest_path(artifacts.first().context("manifest without artifacts")?);
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_beside_artifact() {
        assert_eq!(
            manifest_path(Path::new("out/demos.jsonl")),
            PathBuf::from("out/demos.jsonl.manifest.json")
        );
    }

    #[test]
    fn digests_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        std::fs::write(&a, b"abc").unwrap();
        let m = write_manifest("test", &serde_json::json!({"k": 1}), vec![1], &[], &[&a]).unwrap();
        let parsed: RunManifest =
            serde_json::from_str(&std::fs::read_to_string(m).unwrap()).unwrap();
        assert_eq!(
            parsed.artifacts[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(parsed.seeds, vec![1]);
    }
}
