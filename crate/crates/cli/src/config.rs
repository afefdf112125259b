//! Run configuration: one JSON document, overridable per field from flags.
//!
//! Every leaf of the serialized default config becomes a flag named
//! `--<section>-<field>` (underscores turned into dashes), so the flag set and
//! its help text cannot drift from the config schema.

use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use wifipose::{PckConfig, SceneConfig, TrainConfig, WpnetConfig};

pub const SEED_ENV: &str = "WIFIPOSE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { val_frac: 0.2, test_frac: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub dataset_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self { dataset_dir: "dataset".into(), checkpoint: "checkpoint".into(), output_dir: "out".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub net: WpnetConfig,
    pub train: TrainConfig,
    pub pck: PckConfig,
    pub split: SplitConfig,
    pub paths: PathConfig,
}

/// A configurable leaf: its section, field and default value.
pub struct Leaf {
    pub section: String,
    pub field: String,
    pub default: Value,
}

impl Leaf {
    pub fn flag(&self) -> String {
        format!("{}-{}", self.section, self.field).replace('_', "-")
    }

    /// Default rendered the way the flag accepts it.
    pub fn default_text(&self) -> String {
        value_text(&self.default)
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(value_text).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

pub fn leaves() -> Vec<Leaf> {
    let root = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut out = Vec::new();
    for (section, fields) in root.as_object().expect("object") {
        for (field, default) in fields.as_object().expect("sections are objects") {
            out.push(Leaf { section: section.clone(), field: field.clone(), default: default.clone() });
        }
    }
    out
}

/// Add one `--<section>-<field>` flag per leaf, with its default in the help.
pub fn add_override_args(mut cmd: Command) -> Command {
    for leaf in leaves() {
        let flag = leaf.flag();
        let help = format!("{}.{} [default: {}]", leaf.section, leaf.field, leaf.default_text());
        cmd = cmd.arg(
            Arg::new(flag.clone())
                .long(flag)
                .value_name(leaf.field.to_uppercase())
                .help(help)
                .global(true)
                .help_heading("Config overrides"),
        );
    }
    cmd
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {}: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid value `{value}` for --{flag}: {reason}")]
    Flag { flag: String, value: String, reason: String },
    #[error("invalid {SEED_ENV} `{0}`: expected a non-negative integer")]
    SeedEnv(String),
}

fn parse_flag_value(leaf: &Leaf, raw: &str) -> Result<Value, ConfigError> {
    let bad = |reason: String| ConfigError::Flag { flag: leaf.flag(), value: raw.into(), reason };
    match &leaf.default {
        Value::String(_) => Ok(Value::String(raw.into())),
        Value::Array(_) => serde_json::from_str(&format!("[{raw}]")).map_err(|e| bad(e.to_string())),
        _ => serde_json::from_str(raw).map_err(|e| bad(e.to_string())),
    }
}

/// Config file (or defaults), then the seed environment variable, then flags.
pub fn resolve(file: Option<&Path>, seed_env: Option<&str>, matches: &ArgMatches) -> Result<RunConfig, ConfigError> {
    let base = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.into(), source: e })?;
            serde_json::from_str::<RunConfig>(&text).map_err(|e| ConfigError::Parse { path: path.into(), source: e })?
        }
        None => RunConfig::default(),
    };
    let mut value = serde_json::to_value(base).expect("config serializes");
    if let Some(raw) = seed_env {
        let seed: u64 = raw.trim().parse().map_err(|_| ConfigError::SeedEnv(raw.into()))?;
        value["scene"]["seed"] = seed.into();
        value["train"]["seed"] = seed.into();
    }
    for leaf in leaves() {
        if let Some(raw) = matches.get_one::<String>(&leaf.flag()) {
            let v = parse_flag_value(&leaf, raw)?;
            let section: &mut Map<String, Value> = value[&leaf.section].as_object_mut().expect("section object");
            section.insert(leaf.field.clone(), v);
            serde_json::from_value::<RunConfig>(value.clone()).map_err(|e| ConfigError::Flag {
                flag: leaf.flag(),
                value: raw.clone(),
                reason: e.to_string(),
            })?;
        }
    }
    Ok(serde_json::from_value(value).expect("validated above"))
}
