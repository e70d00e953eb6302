//! The manifest written into every output directory.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use iic_core::report::write_json;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to re-run a command. Apart from `wall_clock_s`, a
/// manifest is a pure function of the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Effective flag values, config-file defaults included.
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    /// Files written next to the manifest.
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn new<A: Serialize>(command: &str, args: &A, inputs: Vec<String>, outputs: Vec<String>, seed: Option<u64>, start: Instant) -> Self {
        Self {
            command: command.to_string(),
            config: serde_json::to_value(args).expect("flags serialize"),
            inputs,
            outputs,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_s: start.elapsed().as_secs_f64(),
        }
    }

    pub fn write(&self, dir: &Path) -> iic_core::Result<()> {
        write_json(dir.join(MANIFEST_FILE), self)
    }
}
