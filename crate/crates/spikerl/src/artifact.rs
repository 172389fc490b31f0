//! Persisted JSON record of a training run, consumed by the benchmark
//! and report commands. Those commands never recompute training
//! quantities; they only derive metrics from what is stored here.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::green::RunMetrics;

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_test_reward: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunArtifact {
    pub artifact_version: u32,
    pub tool_version: String,
    pub label: String,
    pub seed: u64,
    pub rank: usize,
    pub world_size: usize,
    /// Echo of the full effective configuration.
    pub config: RunConfig,
    /// Mean evaluation return of the untrained policy.
    pub initial_eval_reward: f64,
    pub epochs: Vec<EpochRecord>,
    pub param_hash: String,
    pub wall_time_s: f64,
    pub energy_kwh: Option<f64>,
    pub avg_power_kw: Option<f64>,
    pub meter: String,
    pub meter_note: Option<String>,
}

impl RunArtifact {
    pub fn reward_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_test_reward).collect()
    }

    /// Complete (time, energy, power) triple, when the run was metered.
    pub fn metrics(&self) -> Option<RunMetrics> {
        match (self.energy_kwh, self.avg_power_kw) {
            (Some(e), Some(p)) => Some(RunMetrics {
                label: self.label.clone(),
                wall_time_s: self.wall_time_s,
                energy_kwh: e,
                avg_power_kw: p,
            }),
            _ => None,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })
    }

    pub fn load(path: &Path) -> Result<RunArtifact> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let artifact: RunArtifact = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: not a run artifact: {e}", path.display())))?;
        if artifact.artifact_version != ARTIFACT_VERSION {
            return Err(Error::Config(format!(
                "{}: artifact version {} unsupported",
                path.display(),
                artifact.artifact_version
            )));
        }
        Ok(artifact)
    }
}
