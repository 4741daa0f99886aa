//! Run manifests: every command writes one next to its primary output, with
//! enough resolved configuration and input hashes to re-run the command.

use std::path::{Path, PathBuf};

use serde::Serialize;

use sepdetect::hashing::sha256_hex_file;
use sepdetect::Result;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value) -> Self {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            subcommand: subcommand.to_string(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed: None,
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex_file(path)?,
        });
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Writes the manifest next to `primary_output` as
    /// `<name>.manifest.json`.
    pub fn write(&self, primary_output: &Path) -> Result<()> {
        let path = manifest_path(primary_output);
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    name.push_str(".manifest.json");
    output.with_file_name(name)
}
