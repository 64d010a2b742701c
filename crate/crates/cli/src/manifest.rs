use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub input_paths: Vec<PathBuf>,
    pub output_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    /// sha256 over the command, its resolved options and every input's bytes.
    pub config_digest: String,
    pub tool_version: String,
}

/// Collects inputs and outputs of one invocation.
pub struct Run {
    command: &'static str,
    options: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    out_dir: PathBuf,
}

impl Run {
    pub fn new(command: &'static str, out_dir: &Path, options: impl Serialize, seed: Option<u64>) -> Result<Self, CliError> {
        fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Failure(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Run {
            command,
            options: serde_json::to_value(options).expect("options serialize"),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            out_dir: out_dir.to_path_buf(),
        })
    }

    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(path.to_path_buf());
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.out_dir.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("value serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes the manifest; input bytes are re-read so the digest covers
    /// exactly what is on disk.
    pub fn finish(self) -> Result<RunManifest, CliError> {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update([0]);
        h.update(self.options.to_string().as_bytes());
        h.update([0]);
        for p in &self.inputs {
            let bytes = fs::read(p)
                .map_err(|e| CliError::Failure(format!("cannot re-read {}: {e}", p.display())))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            input_paths: self.inputs,
            output_paths: self.outputs,
            seed: self.seed,
            config_digest: format!("{:x}", h.finalize()),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.out_dir.join(FILE_NAME);
        fs::write(&path, text)
            .map_err(|e| CliError::Failure(format!("cannot write {}: {e}", path.display())))?;
        Ok(manifest)
    }
}
