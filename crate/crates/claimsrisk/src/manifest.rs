//! Run manifests: what ran, with which inputs, producing which outputs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::AppResult;
use crate::output::{sha256_file, write_json};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path, shown_as: String) -> AppResult<Self> {
        let bytes = std::fs::metadata(path).map_err(|e| crate::error::AppError::io(path, e))?.len();
        Ok(Self { path: shown_as, sha256: sha256_file(path)?, bytes })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub subcommand: String,
    /// Command line after the program name.
    pub args: Vec<String>,
    /// Fully resolved configuration, defaults filled in.
    pub config: serde_json::Value,
    pub master_seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
}

/// Collects inputs and outputs during a run and writes the manifest last.
pub struct ManifestBuilder {
    subcommand: String,
    args: Vec<String>,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, args: Vec<String>, seed: Option<u64>) -> Self {
        Self { subcommand: subcommand.into(), args, seed, config: serde_json::Value::Null, inputs: Vec::new(), outputs: Vec::new(), started: Instant::now() }
    }

    pub fn config<T: Serialize>(&mut self, config: &T) {
        self.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Hashes everything and writes `manifest.json` into `out_dir`.
    pub fn finish(self, out_dir: &Path) -> AppResult<RunManifest> {
        let inputs = self.inputs.iter().map(|p| FileDigest::of(p, p.display().to_string())).collect::<AppResult<Vec<_>>>()?;
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for p in &self.outputs {
            let shown = p.strip_prefix(out_dir).unwrap_or(p).display().to_string();
            outputs.push(FileDigest::of(p, shown)?);
        }
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let m = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            subcommand: self.subcommand,
            args: self.args,
            config: self.config,
            master_seed: self.seed,
            inputs,
            outputs,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_json(&out_dir.join(MANIFEST_FILE), &m)?;
        Ok(m)
    }
}
