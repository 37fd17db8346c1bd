use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance of one command invocation. Wall-clock time is kept out of the
/// manifest so that identical inputs give byte-identical artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, config_bytes: &[u8], seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_sha256: sha256_hex(config_bytes),
            inputs: BTreeMap::new(),
            seed,
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    /// Reads an input file, recording its hash under `role`.
    pub fn read_input(&mut self, role: &str, path: &Path) -> CliResult<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.inputs.insert(role.to_string(), sha256_hex(&bytes));
        Ok(bytes)
    }
}

/// Writes artifacts into the output directory.
pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::Output(format!("{}: {e}", root.display())))?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))
    }

    /// Binary artifact plus a `<name>.manifest.json` sidecar.
    pub fn write_artifact(&self, name: &str, bytes: &[u8], manifest: &RunManifest) -> CliResult<()> {
        self.write(name, bytes)?;
        #[derive(Serialize)]
        struct Sidecar<'a> {
            artifact: &'a str,
            sha256: String,
            manifest: &'a RunManifest,
        }
        let sidecar = Sidecar { artifact: name, sha256: sha256_hex(bytes), manifest };
        self.write_json(&format!("{name}.manifest.json"), &sidecar)
    }

    /// JSON report with the manifest embedded under `manifest`.
    pub fn write_report<T: Serialize>(&self, name: &str, report: &T, manifest: &RunManifest) -> CliResult<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            manifest: &'a RunManifest,
            #[serde(flatten)]
            report: &'a T,
        }
        self.write_json(name, &Wrapped { manifest, report })
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}
