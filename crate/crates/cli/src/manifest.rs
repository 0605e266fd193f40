//! Per-run `manifest.json`: resolved settings and artifact digests. It holds
//! no timestamps, so reruns with the same inputs write the same bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub settings: BTreeMap<String, Value>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub summary: BTreeMap<String, Value>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            settings: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            summary: BTreeMap::new(),
        }
    }

    pub fn setting(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.settings.insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
        self
    }

    pub fn summary(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.summary.insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
        self
    }

    /// Keyed by file name so the manifest does not depend on where the run lives.
    pub fn input(&mut self, path: &Path, bytes: &[u8]) -> &mut Self {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.inputs.insert(name, sha256_hex(bytes));
        self
    }

    pub fn output(&mut self, name: &str, bytes: &[u8]) -> &mut Self {
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        self
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("serializable");
        text.push('\n');
        crate::write_file(&dir.join(FILE), text.as_bytes())
    }
}
