//! Run configuration: built-in defaults, overlaid by an optional TOML file,
//! overlaid by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use osdiag::mission::MissionConfig;
use osdiag::synth::GeneratorConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const OUTPUT_ROOT_ENV: &str = "OSDIAG_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub threads: usize,
    pub generator: GeneratorConfig,
    pub mission: MissionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            threads: 1,
            generator: GeneratorConfig::default(),
            mission: MissionConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "--config {}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                path.display(),
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("run config serializes to a table")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        // TOML integers are signed 64-bit; larger seeds could not be written
        // back into the reports.
        for (name, seed) in [
            ("generator seed", self.generator.seed),
            ("seed", self.mission.seed),
        ] {
            if seed > i64::MAX as u64 {
                return Err(CliError::Usage(format!(
                    "{name} must be at most {}",
                    i64::MAX
                )));
            }
        }
        if self.threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        self.generator.validate()?;
        self.mission.validate()?;
        Ok(())
    }
}

/// Resolves an output path: relative paths go under `$OSDIAG_OUTPUT_ROOT` when it is set.
pub fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() && !root.is_empty() => Path::new(&root).join(p),
        _ => p.to_path_buf(),
    }
}
