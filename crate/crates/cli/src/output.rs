use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::CliError;

/// Table format selected by `--format`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Record of one run, written as `manifest.json` next to its outputs.
///
/// Timestamps are the only fields that vary between identical runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<OutputFile>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Output directory of one command.
pub struct RunDir {
    dir: PathBuf,
    command: String,
    started: u128,
    files: Vec<OutputFile>,
}

impl RunDir {
    pub fn create(root: &Path, command: &str) -> Result<Self, CliError> {
        let dir = root.join(command);
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            command: command.to_string(),
            started: now_ms(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(OutputFile {
            path: name.to_string(),
            sha256: hex(&Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes rows as `<stem>.csv` or as a JSON array of objects.
    pub fn write_table(&mut self, stem: &str, format: Format, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        match format {
            Format::Csv => {
                let mut text = header.join(",");
                text.push('\n');
                for r in rows {
                    let cells: Vec<String> = r.iter().map(|c| csv_cell(c)).collect();
                    text.push_str(&cells.join(","));
                    text.push('\n');
                }
                self.write(&format!("{stem}.csv"), text.as_bytes())
            }
            Format::Json => {
                let objects: Vec<serde_json::Map<String, serde_json::Value>> = rows
                    .iter()
                    .map(|r| {
                        header
                            .iter()
                            .zip(r)
                            .map(|(k, v)| {
                                let val = serde_json::from_str::<serde_json::Number>(v)
                                    .map(serde_json::Value::Number)
                                    .unwrap_or_else(|_| serde_json::Value::String(v.clone()));
                                (k.to_string(), val)
                            })
                            .collect()
                    })
                    .collect();
                self.write_json(&format!("{stem}.json"), &objects)
            }
        }
    }

    /// Writes `manifest.json` and returns the manifest.
    pub fn finish(self, config_hash: String, seed: Option<u64>) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            tool: "kinlab".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.clone(),
            config_hash,
            seed,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
            outputs: self.files.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        Ok(manifest)
    }
}

fn csv_cell(c: &str) -> String {
    if c.contains([',', '"', '\n']) {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_string()
    }
}

/// Shortest round-trip text of a float.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
