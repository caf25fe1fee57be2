use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use crate::util::{digest_path, write_json};
use crate::Context;

/// Record of one invocation: enough to rerun it and check its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub seed: u64,
    /// SHA-256 of every input file or dataset, by label.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written, by path relative to the output directory.
    pub outputs: BTreeMap<String, String>,
    pub version: String,
}

impl RunManifest {
    pub fn new(ctx: &Context, command: &str, config: impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            argv: ctx.argv.clone(),
            config: serde_json::to_value(config)?,
            seed: ctx.seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").into(),
        })
    }

    pub fn input(&mut self, label: &str, path: &Path) -> Result<()> {
        self.inputs.insert(label.into(), digest_path(path)?);
        Ok(())
    }

    pub fn output(&mut self, out_dir: &Path, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(out_dir).unwrap_or(path);
        self.outputs.insert(rel.display().to_string(), digest_path(path)?);
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}
