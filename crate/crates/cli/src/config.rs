//! Config-file overlay: a TOML file supplies any flag value, flags win.

use std::path::Path;

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Merges `cli` over the optional TOML file at `path`. Keys are the flag names
/// with underscores. Unknown keys are rejected.
pub fn overlay<T: Serialize + DeserializeOwned>(cli: &T, path: Option<&Path>) -> anyhow::Result<T> {
    let Some(path) = path else {
        return to_table(cli).and_then(from_table);
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut merged: toml::Table = toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))?;
    let file_keys: Vec<String> = merged.keys().cloned().collect();
    merged.extend(to_table(cli)?);
    let value: T = from_table(merged).with_context(|| format!("invalid config file {}", path.display()))?;
    let accepted = to_table(&value)?;
    let unknown: Vec<&str> = file_keys.iter().map(String::as_str).filter(|k| !accepted.contains_key(*k)).collect();
    if !unknown.is_empty() {
        bail!("unknown key(s) in config file {}: {}", path.display(), unknown.join(", "));
    }
    Ok(value)
}

fn to_table<T: Serialize>(value: &T) -> anyhow::Result<toml::Table> {
    Ok(toml::Table::try_from(value)?)
}

fn from_table<T: DeserializeOwned>(table: toml::Table) -> anyhow::Result<T> {
    Ok(toml::Value::Table(table).try_into()?)
}
