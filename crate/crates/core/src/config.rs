//! Run configuration: a TOML file with `[experiment]` and `[synth]` tables, plus
//! dotted `key=value` overrides applied after parsing.
//!
//! ```toml
//! [experiment]
//! model = "ego_obj"
//! relation = "on"
//! seeds = [0, 1, 2]
//! mask = { ego = true, language = true, vision = false }
//!
//! [synth]
//! n_objects = 40
//! ```
//!
//! Override values are parsed as TOML (`experiment.epochs=5`, `experiment.seeds=[1,2]`);
//! anything that does not parse is taken as a bare string (`experiment.relation=on`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CoreError, Result};
use crate::harness::ExperimentConfig;
use crate::synth::SynthConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub synth: SynthConfig,
}

/// Sets `dotted.path` inside `table`, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CoreError::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CoreError::Config(format!("override key {key:?} is malformed")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CoreError::Config(format!("override {key:?}: {p:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Parses config text (may be empty), applies overrides and validates both sections.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: Table = text.parse().map_err(|e: toml::de::Error| CoreError::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| CoreError::Config(e.to_string()))?;
    cfg.experiment.validate()?;
    cfg.synth.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| CoreError::io(p, e))?,
        None => String::new(),
    };
    parse_config(&text, overrides)
}

/// Fully resolved config; parsing it back yields the same value.
pub fn render_config(cfg: &RunConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| CoreError::Config(e.to_string()))
}
