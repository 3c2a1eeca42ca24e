//! Run configuration: a TOML file with `[model]`, `[train]`, `[synth]` and
//! `[data]` tables, every key optional.
//!
//! ```toml
//! [model]
//! seed = 0
//! precision = "single"          # or "double"
//! classes = 3
//! readout = "node-select"       # none | node-select | last-node | mean | sum
//! conv = "im2col"               # or "direct"
//!
//! [model.encoder]
//! channels = [8, 16]
//! pool_min_spatial = 4
//!
//! [model.gnn]
//! layers = 2
//! channels = 16
//! aggregation = "sum"           # or "mean"
//!
//! [model.loss]
//! kind = "composite"            # or "iou-composite"
//! gamma = 1.0
//!
//! [train]
//! epochs = 50
//! batch_size = 8
//! stop_at_train_accuracy = 0.99
//!
//! [train.adam]
//! lr = 5.12e-5
//!
//! [synth]
//! samples = 2000
//! mode = "constructed"          # or "jitter"
//!
//! [data]
//! node_size = 32
//! ```
//!
//! Any key can also be set from the command line as `section.key=value`,
//! where `value` is a TOML literal (`0.001`, `true`, `[8, 16]`, `"mean"`);
//! bare words are taken as strings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detfusion::synth::SynthConfig;
use crate::error::{Context, Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Side of the square crop each detection node carries.
    pub node_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { node_size: 32 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if self.data.node_size == 0 {
            return Err(Error::config("data.node_size must be positive"));
        }
        Ok(())
    }

    /// Parses TOML text after applying `overrides` (`a.b.c=value`).
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e| Error::config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (defaults when `None`) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides).file(path.unwrap_or(Path::new("<defaults>")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Sets the dotted key of `assignment` (`train.adam.lr=1e-3`) in `table`.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::config(format!("bad key `{key}`")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
