use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use kinereco::{Error, Result};

pub const TOOL: &str = "kinereco";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything that determines a run's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Option<String>,
    /// SHA-256 of the configuration file contents.
    pub config_sha256: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub params: BTreeMap<String, String>,
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct Stamped<'a> {
    #[serde(flatten)]
    manifest: &'a RunManifest,
    manifest_hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config: None,
            config_sha256: None,
            inputs: BTreeMap::new(),
            params: BTreeMap::new(),
            seed: None,
        }
    }

    pub fn config(mut self, path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.config = Some(path.display().to_string());
        self.config_sha256 = Some(sha256_hex(&bytes));
        Ok(self)
    }

    pub fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.into(), path.display().to_string());
        self
    }

    pub fn param(mut self, name: &str, value: impl ToString) -> Self {
        self.params.insert(name.into(), value.to_string());
        self
    }

    /// `sha256:<hex>` over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("manifest serializes");
        format!("sha256:{}", sha256_hex(&json))
    }

    /// Comment block placed at the top of every CSV output.
    pub fn comment(&self) -> String {
        format!("{} {} {}\nmanifest {}", self.tool, self.version, self.command, self.hash())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let stamped = Stamped {
            manifest: self,
            manifest_hash: self.hash(),
        };
        let mut text = serde_json::to_string_pretty(&stamped).map_err(|e| Error::json(&path, e))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
