use std::collections::BTreeMap;

use osdiag::dataset::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// Stamped into every artifact the CLI writes. Holds nothing that varies
/// between identical runs (no timestamps, no absolute paths).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 over the sorted `role=hash` lines of `inputs`.
    pub input_hash: String,
    /// Content hash of each input, by role.
    pub inputs: BTreeMap<String, String>,
    /// The effective configuration after defaults, file and flags.
    pub config: toml::Table,
}

impl Provenance {
    pub fn new(
        command: &str,
        seed: u64,
        cfg: &RunConfig,
        inputs: BTreeMap<String, String>,
    ) -> Self {
        let lines: Vec<String> = inputs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        Provenance {
            tool: "osdiag".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            input_hash: sha256_hex(lines.join("\n").as_bytes()),
            inputs,
            config: cfg.to_table(),
        }
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("provenance serializes to a table")
    }

    /// One-line summary for formats without structured metadata.
    pub fn summary(&self) -> String {
        let cfg = toml::to_string(&self.config).unwrap_or_default();
        format!(
            "{} {} {} seed={} input_sha256={} config_sha256={}",
            self.tool,
            self.version,
            self.command,
            self.seed,
            self.input_hash,
            sha256_hex(cfg.as_bytes())
        )
    }
}
