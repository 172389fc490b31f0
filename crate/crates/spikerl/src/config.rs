//! Run configuration: JSON files, dotted-key command-line overrides and
//! `SPIKERL_*` environment overrides, merged in that order. Unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::amp::AmpConfig;
use crate::error::{Error, Result};
use crate::snn::SnnConfig;
use crate::td3::Td3Config;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistConfig {
    /// "none", "loopback" or "tcp".
    pub backend: String,
    pub rank: usize,
    pub world_size: usize,
    /// host:port per rank, used by the tcp backend.
    pub peers: Vec<String>,
    pub timeout_s: f64,
    /// Gradient synchronization call pattern: "a" (explicit averaging)
    /// or "b" (post-backward hook). Numerically identical.
    pub scheme: String,
}

impl Default for DistConfig {
    fn default() -> Self {
        DistConfig {
            backend: "none".into(),
            rank: 0,
            world_size: 1,
            peers: Vec::new(),
            timeout_s: 30.0,
            scheme: "a".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeterConfig {
    /// "auto" (RAPL, falling back to constant power), "rapl",
    /// "constant_power" or "off".
    pub kind: String,
    /// Wattage assumed by the constant-power meter.
    pub watts: f64,
}

impl Default for MeterConfig {
    fn default() -> Self {
        MeterConfig {
            kind: "auto".into(),
            watts: 100.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: String,
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub eval_episodes: usize,
    /// Artifact label; defaults to the environment name when empty.
    pub label: String,
    pub out: Option<String>,
    /// When set, the trained actor checkpoint is written here.
    pub save_actor: Option<String>,
    pub snn: SnnConfig,
    pub td3: Td3Config,
    pub amp: AmpConfig,
    pub dist: DistConfig,
    pub meter: MeterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: "pendulum".into(),
            seed: 0,
            epochs: 10,
            steps_per_epoch: 1000,
            eval_episodes: 5,
            label: String::new(),
            out: None,
            save_actor: None,
            snn: SnnConfig::default(),
            td3: Td3Config::default(),
            amp: AmpConfig::default(),
            dist: DistConfig::default(),
            meter: MeterConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn effective_label(&self) -> String {
        if self.label.is_empty() {
            self.env.clone()
        } else {
            self.label.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Config(
                "epochs and steps_per_epoch must be >= 1".into(),
            ));
        }
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be >= 1".into()));
        }
        self.snn.validate()?;
        self.td3.validate()?;
        self.amp.cast_policy()?;
        match self.dist.backend.as_str() {
            "none" | "loopback" | "tcp" => {}
            other => {
                return Err(Error::Config(format!(
                    "dist.backend must be none, loopback or tcp, got '{other}'"
                )))
            }
        }
        match self.dist.scheme.as_str() {
            "a" | "b" => {}
            other => {
                return Err(Error::Config(format!(
                    "dist.scheme must be 'a' or 'b', got '{other}'"
                )))
            }
        }
        if self.dist.world_size == 0 {
            return Err(Error::Config("dist.world_size must be >= 1".into()));
        }
        match self.meter.kind.as_str() {
            "auto" | "rapl" | "constant_power" | "off" => Ok(()),
            other => Err(Error::Config(format!(
                "meter.kind must be auto, rapl, constant_power or off, got '{other}'"
            ))),
        }
    }
}

/// Load a config: file (optional), then environment overrides, then
/// dotted-key overrides from the command line.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut tree: Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(serde_json::Map::new()),
    };
    for (key, value) in env_config_overrides() {
        set_dotted(&mut tree, &key, value)?;
    }
    for (key, raw) in overrides {
        // "--amp off|bf16|fp16" is shorthand for the two amp keys.
        if key == "amp" {
            set_dotted(&mut tree, "amp.enabled", Value::from(raw != "off"))?;
            set_dotted(&mut tree, "amp.format", Value::from(raw.as_str()))?;
            continue;
        }
        set_dotted(&mut tree, key, parse_override_value(raw))?;
    }
    let cfg: RunConfig =
        serde_json::from_value(tree).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// `SPIKERL_RANK`, `SPIKERL_WORLD`, `SPIKERL_PEERS` (comma separated) and
/// `SPIKERL_SEED` map onto their config keys.
fn env_config_overrides() -> Vec<(String, Value)> {
    let mut out = Vec::new();
    if let Ok(v) = std::env::var("SPIKERL_RANK") {
        if let Ok(n) = v.parse::<u64>() {
            out.push(("dist.rank".into(), Value::from(n)));
        }
    }
    if let Ok(v) = std::env::var("SPIKERL_WORLD") {
        if let Ok(n) = v.parse::<u64>() {
            out.push(("dist.world_size".into(), Value::from(n)));
        }
    }
    if let Ok(v) = std::env::var("SPIKERL_PEERS") {
        let peers: Vec<Value> = v.split(',').map(|s| Value::from(s.trim())).collect();
        out.push(("dist.peers".into(), Value::from(peers)));
    }
    if let Ok(v) = std::env::var("SPIKERL_SEED") {
        if let Ok(n) = v.parse::<u64>() {
            out.push(("seed".into(), Value::from(n)));
        }
    }
    out
}

/// Values parse as JSON when they can (numbers, booleans, arrays) and
/// fall back to strings.
fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::from(raw))
}

fn set_dotted(tree: &mut Value, dotted: &str, value: Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!("malformed override key '{dotted}'")));
        }
        let obj = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!("override '{dotted}' descends into a non-object"))
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(serde_json::Map::new()));
    }
    unreachable!("loop always returns on the last part")
}
