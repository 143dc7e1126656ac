//! `provenance.json` sidecars and JSON report output.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;

pub const SIDECAR: &str = "provenance.json";

/// Common provenance fields: hash, command, tool version and the hashed config.
pub fn record(cfg: &RunConfig, command: &str, details: Value) -> Value {
    json!({
        "config_hash": cfg.hash(),
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg.canonical(),
        "details": details,
    })
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Write the sidecar of a clip directory.
pub fn write_sidecar(dir: &Path, record: &Value) -> Result<()> {
    write_json(&dir.join(SIDECAR), record)
}

/// Read the sidecar of `dir`, if any.
pub fn read_sidecar(dir: &Path) -> Option<Value> {
    let text = fs::read_to_string(dir.join(SIDECAR)).ok()?;
    serde_json::from_str(&text).ok()
}
