use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::approx::CHECKPOINT_VERSION;
use crate::config::RunConfig;
use crate::diagnostics::LEDGER_COLUMNS;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Everything needed to rerun a command, plus what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: u32,
    pub command: String,
    pub crate_version: String,
    /// Fully resolved configuration (after `--seed` and other overrides).
    pub config: Option<RunConfig>,
    pub seed: u64,
    pub deterministic: bool,
    pub threads: Option<usize>,
    /// Command-specific arguments.
    #[serde(default)]
    pub args: BTreeMap<String, serde_json::Value>,
    /// Format versions of the artifacts written.
    pub artifacts: BTreeMap<String, String>,
    /// Paths relative to the output directory.
    #[serde(default)]
    pub outputs: Vec<String>,
    /// Wall-clock seconds per phase.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<RunConfig>, seed: u64, deterministic: bool, threads: Option<usize>) -> Self {
        let mut artifacts = BTreeMap::new();
        artifacts.insert("manifest".into(), MANIFEST_VERSION.to_string());
        artifacts.insert("checkpoint".into(), CHECKPOINT_VERSION.to_string());
        artifacts.insert("ledger_columns".into(), LEDGER_COLUMNS.join(","));
        Self {
            version: MANIFEST_VERSION,
            command: command.into(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            config,
            seed,
            deterministic,
            threads,
            args: BTreeMap::new(),
            artifacts,
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn arg(&mut self, key: &str, value: impl Serialize) {
        self.args.insert(key.into(), serde_json::to_value(value).expect("argument serialises"));
    }

    pub fn output(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.into());
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Config(format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }
}
