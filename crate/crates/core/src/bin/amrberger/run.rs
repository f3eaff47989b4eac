//! Run directories: every artifact is recorded with its size and SHA-256 in
//! `manifest.json`, next to the resolved-config snapshot.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{config, data, Cli, CliError};

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    bytes: usize,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    artifacts: &'a [Artifact],
    summary: serde_json::Value,
}

pub struct RunDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| data(anyhow::anyhow!("cannot create {}: {e}", root.display())))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, bytes)
            .map_err(|e| data(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;
        self.record(name, bytes);
        Ok(())
    }

    /// Records a file some other writer already produced.
    pub fn adopt(&mut self, name: &str) -> Result<(), CliError> {
        let path = self.path(name);
        let bytes = fs::read(&path)
            .map_err(|e| data(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
        self.record(name, &bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact {
            path: name.to_string(),
            bytes: bytes.len(),
            sha256: Sha256::digest(bytes)
                .iter()
                .map(|b| format!("{b:02x}"))
                .collect(),
        });
    }

    pub fn finish(mut self, cli: &Cli, summary: serde_json::Value) -> Result<(), CliError> {
        self.write("config.resolved", config::snapshot(cli).as_bytes())?;
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: cli.command.name(),
            seed: cli.seed,
            artifacts: &self.artifacts,
            summary,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(crate::internal)?;
        text.push('\n');
        let path = self.path("manifest.json");
        fs::write(&path, text)
            .map_err(|e| data(anyhow::anyhow!("cannot write {}: {e}", path.display())))
    }
}
