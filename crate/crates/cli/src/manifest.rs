use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use fairgen_core::fingerprint;

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of an artifact directory: the resolved configuration, seeds,
/// fingerprints of the trained components, step runtimes and a content hash
/// of every file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub fingerprints: BTreeMap<String, String>,
    pub runtime_seconds: BTreeMap<String, f64>,
    pub artifacts: Vec<ArtifactEntry>,
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<ArtifactEntry>) -> Result<(), CliError> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root).expect("inside root");
        let rel = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        if rel == MANIFEST || rel == "error.json" {
            continue;
        }
        let bytes = std::fs::read(&path)?;
        out.push(ArtifactEntry {
            path: rel,
            sha256: fingerprint::of_bytes(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    Ok(())
}

impl Manifest {
    /// Continue the manifest of an earlier step when its seed matches;
    /// otherwise start afresh.
    pub fn load_or_new(out: &Path, config: &RunConfig) -> Result<Self, CliError> {
        let fresh = || Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            fingerprints: BTreeMap::new(),
            runtime_seconds: BTreeMap::new(),
            artifacts: Vec::new(),
        };
        let path = out.join(MANIFEST);
        if !path.exists() {
            return Ok(fresh());
        }
        match serde_json::from_str::<Manifest>(&std::fs::read_to_string(&path)?) {
            Ok(mut m) if m.seed == config.seed => {
                m.config = config.clone();
                Ok(m)
            }
            _ => Ok(fresh()),
        }
    }

    pub fn fingerprint(&mut self, key: &str, value: String) {
        self.fingerprints.insert(key.to_string(), value);
    }

    pub fn runtime(&mut self, step: &str, seconds: f64) {
        self.runtime_seconds.insert(step.to_string(), seconds);
    }

    /// Rehash the directory and write the manifest.
    pub fn write(&mut self, out: &Path) -> Result<(), CliError> {
        let mut artifacts = Vec::new();
        collect(out, out, &mut artifacts)?;
        self.artifacts = artifacts;
        std::fs::write(out.join(MANIFEST), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(out: &Path) -> Result<Self, CliError> {
        let path = out.join(MANIFEST);
        if !path.exists() {
            return Err(CliError::MissingArtifact {
                path,
                step: "audit",
            });
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
