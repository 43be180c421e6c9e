//! Run manifests: enough captured state to reproduce a run bit for bit given
//! the same inputs and tool version. No timestamps, no absolute environment.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::csvio::write_atomic;
use crate::errors::{CliError, CliResult};

#[derive(Serialize)]
pub struct RunManifest {
    /// The invocation, reconstructed from argv.
    pub command: String,
    /// Input path -> sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Full command-specific configuration snapshot.
    pub config: serde_json::Value,
    pub tool_version: String,
    pub seed: u64,
    /// Random number generation scheme identifier.
    pub rng: String,
}

impl RunManifest {
    pub fn new(config: serde_json::Value, seed: u64) -> Self {
        let args: Vec<String> = std::env::args().skip(1).collect();
        Self {
            command: args.join(" "),
            inputs: BTreeMap::new(),
            config,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            rng: varhsmm::simulate::RNG_ALGORITHM.to_string(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path)
            .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.inputs
            .insert(path.display().to_string(), format!("sha256:{hex}"));
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> CliResult<()> {
        let mut text =
            serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        write_atomic(&out_dir.join("manifest.json"), &text)
    }
}
