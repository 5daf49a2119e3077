//! Provenance records written next to every output artifact.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use deferral_core::io::digest_file;
use deferral_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "DEFERRAL_";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    pub subcommand: String,
    /// Arguments after the program name, exactly as given.
    pub args: Vec<String>,
    /// `DEFERRAL_*` variables set at the time of the call.
    pub env: BTreeMap<String, String>,
    /// SHA-256 of every input file, keyed by the path as given.
    pub input_digests: BTreeMap<String, String>,
    /// SHA-256 of every output file after the command finished.
    pub output_digests: BTreeMap<String, String>,
    pub tool_version: String,
    pub timestamp: String,
}

/// Collects inputs and outputs while a command runs.
#[derive(Debug)]
pub struct Invocation {
    subcommand: String,
    args: Vec<String>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Invocation {
    pub fn new(subcommand: &str, args: Vec<String>) -> Self {
        Invocation {
            subcommand: subcommand.to_string(),
            args,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Records the digest of an input file. Call before reading it.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = digest_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn input_digest(&self, path: &Path) -> Option<&str> {
        self.inputs.get(&path.display().to_string()).map(String::as_str)
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `<output>.invocation.json` for every recorded output.
    pub fn finish(self, now: DateTime<Utc>) -> Result<Vec<PathBuf>> {
        let mut output_digests = BTreeMap::new();
        for path in &self.outputs {
            output_digests.insert(path.display().to_string(), digest_file(path)?);
        }
        let record = InvocationRecord {
            subcommand: self.subcommand,
            args: self.args,
            env: std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect(),
            input_digests: self.inputs,
            output_digests,
            tool_version: TOOL_VERSION.to_string(),
            timestamp: now.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        };
        let text = serde_json::to_string_pretty(&record).map_err(|e| Error::Schema(e.to_string()))? + "\n";
        let mut written = Vec::with_capacity(self.outputs.len());
        for path in &self.outputs {
            let target = record_path(path);
            std::fs::write(&target, &text).map_err(|e| Error::Io {
                path: target.clone(),
                source: e,
            })?;
            written.push(target);
        }
        Ok(written)
    }
}

pub fn record_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_os_string();
    name.push(".invocation.json");
    PathBuf::from(name)
}
