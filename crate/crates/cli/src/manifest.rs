use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// What a command read, wrote and was configured with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_seconds: f64,
    pub artifact_versions: BTreeMap<String, u32>,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let text = serde_json::to_string(config).expect("JSON values always serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl ManifestBuilder {
    pub fn new<C: Serialize>(command: &str, config: &C) -> CliResult<Self> {
        let config = serde_json::to_value(config).map_err(|e| CliError::internal(e.to_string()))?;
        let mut artifact_versions = BTreeMap::new();
        artifact_versions.insert(
            "codebooks".into(),
            bofex::bag_of_features::CODEBOOK_FORMAT_VERSION,
        );
        artifact_versions.insert("gbm".into(), bofex::gbm::MODEL_FORMAT_VERSION);
        artifact_versions.insert("fcmh".into(), bofex::fcmh::FCMH_FORMAT_VERSION);
        Ok(ManifestBuilder {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: config_hash(&config),
                config,
                seeds: BTreeMap::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_seconds: 0.0,
                artifact_versions,
            },
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.manifest.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.manifest.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.manifest.outputs.push(path.to_path_buf());
        self
    }

    /// Writes `<dir>/<command>.json` and returns its path.
    pub fn finish(mut self, dir: &Path) -> CliResult<PathBuf> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(format!("{}.json", self.manifest.command));
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::internal(e.to_string()))?;
        std::fs::write(&path, text + "\n")
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
