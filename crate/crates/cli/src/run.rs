//! Machine-readable record of one CLI invocation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use citegen_core::jsonl::{file_sha256, sha256_hex, Manifest};
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
    /// Digest of the artifact's sidecar manifest, when it has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest_sha256: Option<String>,
    /// Digest of the run manifest of the stage that produced the input.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_manifest_sha256: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub builder_version: String,
    pub settings_sha256: String,
    pub settings: Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<OutputRecord>,
    pub counts: BTreeMap<String, Value>,
    pub exit_code: u8,
}

pub fn run_manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_os_string();
    name.push(".run.json");
    PathBuf::from(name)
}

fn digest_if_present(path: &Path) -> anyhow::Result<Option<String>> {
    if path.is_file() {
        Ok(Some(file_sha256(path)?))
    } else {
        Ok(None)
    }
}

/// Digests of every regular file under `path` (the path itself when it is
/// a file), in name order.
fn input_records(path: &Path) -> anyhow::Result<Vec<InputRecord>> {
    let mut files = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        files.extend(entries);
    } else {
        files.push(path.to_path_buf());
    }
    files
        .into_iter()
        .map(|f| {
            Ok(InputRecord {
                sha256: file_sha256(&f)?,
                manifest_sha256: digest_if_present(&Manifest::sidecar_path(&f))?,
                run_manifest_sha256: digest_if_present(&run_manifest_path(&f))?,
                path: f,
            })
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct RunLog {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub counts: BTreeMap<String, Value>,
    pub settings: BTreeMap<String, Value>,
    /// Where the run manifest goes unless overridden.
    pub manifest_path: Option<PathBuf>,
    pub exit_code: u8,
}

impl RunLog {
    pub fn count(&mut self, key: &str, value: impl Serialize) {
        self.counts
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn setting(&mut self, key: &str, value: impl Serialize) {
        self.settings
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn write(self, subcommand: &str, path: &Path) -> anyhow::Result<()> {
        let settings = serde_json::to_value(&self.settings)?;
        let mut inputs = Vec::new();
        for p in &self.inputs {
            inputs.extend(input_records(p)?);
        }
        let outputs = self
            .outputs
            .iter()
            .filter(|p| p.is_file())
            .map(|p| {
                Ok(OutputRecord {
                    path: p.clone(),
                    sha256: file_sha256(p)?,
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            builder_version: citegen_core::BUILDER_VERSION.to_string(),
            settings_sha256: sha256_hex(serde_json::to_string(&settings)?.as_bytes()),
            settings,
            inputs,
            outputs,
            counts: self.counts,
            exit_code: self.exit_code,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        std::fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}
