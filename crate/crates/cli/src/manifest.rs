//! Per-run manifest: what ran, with which settings, on which inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA: &str = "quadlat-manifest-v1";

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    /// Absent for timing artifacts, whose content changes run to run.
    pub sha256: Option<String>,
}

/// One run record. Runs that write into the same directory share its
/// `manifest.json`, keyed by their primary output.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool_version: &'static str,
    pub formats: Formats,
    pub command: String,
    /// Command line after the program name.
    pub args: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

#[derive(Debug, Serialize)]
pub struct Formats {
    pub dataset: &'static str,
    pub weights: &'static str,
    pub report: &'static str,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value, seeds: serde_json::Value) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            formats: Formats {
                dataset: quadlat::dataset::DATASET_FORMAT_VERSION,
                weights: quadlat::nn::WEIGHTS_FORMAT_VERSION,
                report: quadlat::eval::REPORT_SCHEMA,
            },
            command: command.to_string(),
            args: recorded_args(std::env::args().skip(1)),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileEntry {
            path: path.display().to_string(),
            sha256: Some(sha256_file(path)?),
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path, timing: bool) -> Result<()> {
        self.outputs.push(FileEntry {
            path: path.display().to_string(),
            sha256: if timing { None } else { Some(sha256_file(path)?) },
        });
        Ok(())
    }

    /// Insert this run under `key` into the manifest of `dir`, replacing an
    /// earlier run with the same key.
    pub fn record(&self, dir: &Path, key: &str) -> Result<()> {
        let path = manifest_path(dir);
        let mut runs: BTreeMap<String, serde_json::Value> = BTreeMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).with_context(|| format!("reading manifest {}", path.display()))?;
            let old: DirManifest =
                serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))?;
            if old.schema != MANIFEST_SCHEMA {
                bail!(
                    "{} has schema {}, expected {MANIFEST_SCHEMA}",
                    path.display(),
                    old.schema
                );
            }
            runs = old.runs;
        }
        runs.insert(key.to_string(), serde_json::to_value(self)?);
        let body = DirManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            runs,
        };
        let mut text = serde_json::to_string_pretty(&body)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing manifest {}", path.display()))
    }
}

#[derive(Debug, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct DirManifest {
    schema: String,
    runs: BTreeMap<String, serde_json::Value>,
}

/// Command line without the flags that only steer how a run executes, so a
/// forced or differently parallelised rerun records the same manifest.
fn recorded_args(args: impl Iterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip_value = false;
    for a in args {
        if skip_value {
            skip_value = false;
            continue;
        }
        match a.as_str() {
            "--force" | "--json-errors" | "--sequential" => {}
            "--workers" => skip_value = true,
            s if s.starts_with("--workers=") => {}
            _ => out.push(a),
        }
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

/// Directory holding a file output.
pub fn parent_dir(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Run key of a file output.
pub fn file_key(out: &Path) -> String {
    out.file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Refuse to clobber existing files unless forced.
/// Refuse to clobber existing outputs without `--force`, then create their
/// parent directories.
pub fn prepare_outputs(paths: &[PathBuf], force: bool) -> Result<()> {
    if !force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            bail!(crate::UsageError(format!(
                "{} already exists; pass --force to overwrite",
                p.display()
            )));
        }
    }
    for p in paths {
        let dir = parent_dir(p);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_control_flags_are_not_recorded() {
        let a = [
            "--workers",
            "3",
            "gen-data",
            "--force",
            "--n",
            "5",
            "--workers=2",
            "--sequential",
            "--out",
            "x",
        ];
        assert_eq!(
            recorded_args(a.iter().map(|s| s.to_string())),
            ["gen-data", "--n", "5", "--out", "x"]
        );
    }
}
