//! TOML experiment configs with dotted `key=value` overrides.

use std::path::Path;

use consensus_core::experiment::ExperimentConfig;
use toml::{Table, Value};

use crate::CliError;

/// Parses an override value as a TOML literal, falling back to a bare string
/// so `protocol.name=DEBATE` works without quotes.
fn literal(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!(
            "override key `{key}` is malformed"
        )));
    }
    let (last, parents) = path.split_last().expect("split yields one part");
    let mut node = table;
    for part in parents {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("`{part}` in `{key}` is not a table")))?;
    }
    node.insert(last.to_string(), literal(raw.trim()));
    Ok(())
}

pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut table: Table =
        toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: ExperimentConfig = Value::Table(table)
        .try_into()
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    config.check().map_err(CliError::from)?;
    Ok(config)
}
