//! Run configuration: one TOML file, overridden by command-line flags.
//!
//! A single top-level `seed` feeds every random stream of a run (synthetic
//! data, parameter initialization, sample order, baselines) and must be
//! given explicitly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineKind};
use crate::dataset::{LoadOptions, TimestampFormat};
use crate::error::{Error, Result};
use crate::metrics::NmiDirections;
use crate::model::ModelConfig;
use crate::synth::SynthConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub edges: PathBuf,
    /// An empty path means the graph has no attribute file.
    pub attrs: Option<PathBuf>,
    pub conditions: PathBuf,
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            edges: "edges.csv".into(),
            attrs: Some("attrs.csv".into()),
            conditions: "conditions.csv".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Leading share of the time range used for training.
    pub train_fraction: f64,
    pub timestamp_format: TimestampFormat,
    pub strict_timestamps: bool,
    /// Reject edges naming vertices missing from the attribute file.
    pub strict_graph: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_fraction: 0.8,
            timestamp_format: TimestampFormat::Step,
            strict_timestamps: false,
            strict_graph: false,
        }
    }
}

impl DataConfig {
    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            format: self.timestamp_format,
            strict: self.strict_timestamps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Score every `stride`-th test sample.
    pub stride: usize,
    /// Time-of-day bin width in 5-minute slots for RMSE curves.
    pub rmse_bin: usize,
    /// Baselines fitted and scored next to the checkpoints.
    pub baselines: Vec<BaselineKind>,
    /// Horizon (in steps) whose per-sample attention is dumped.
    pub attention_horizon: Option<usize>,
    pub chunk_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            stride: 1,
            rmse_bin: 12,
            baselines: Vec::new(),
            attention_horizon: None,
            chunk_size: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmiConfig {
    pub max_radius: usize,
    pub directions: NmiDirections,
}

impl Default for NmiConfig {
    fn default() -> Self {
        NmiConfig {
            max_radius: 5,
            directions: NmiDirections::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
    pub eval: EvalConfig,
    pub nmi: NmiConfig,
}

/// Splits `key=value`, reading the value as a TOML literal when it parses
/// as one and as a string otherwise.
pub fn parse_override(arg: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {arg:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Sets the dotted `key` of `table`, creating sections on the way.
pub fn set_value(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("bad key {key:?}")))?;
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {part} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides` (`key=value`, dotted keys).
    pub fn load(file: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingPath(p.to_path_buf()));
                }
                std::fs::read_to_string(p)?
                    .parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            set_value(&mut table, k, v.clone())?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if config.paths.attrs.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
            config.paths.attrs = None;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config("data.train_fraction must be in (0, 1)".into()));
        }
        if self.eval.stride == 0 || self.eval.rmse_bin == 0 || self.eval.chunk_size == 0 {
            return Err(Error::Config("eval.stride, eval.rmse_bin and eval.chunk_size must be positive".into()));
        }
        if self.nmi.max_radius == 0 {
            return Err(Error::Config("nmi.max_radius must be positive".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (config `seed` or --seed)".into()))
    }

    /// Copies the run seed into every component configuration.
    pub fn seeded(mut self) -> Result<Self> {
        let seed = self.seed()?;
        self.synth.seed = seed;
        self.train.seed = seed;
        self.baselines.seed = seed;
        self.baselines.train.seed = seed;
        self.baselines.pretrain.seed = seed;
        Ok(self)
    }

    /// `path` relative to the output directory.
    pub fn out(&self, path: impl AsRef<Path>) -> PathBuf {
        self.paths.output.join(path)
    }
}
