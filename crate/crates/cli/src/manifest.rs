//! Provenance record written next to every set of artifacts.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::scenario::LoadedScenario;
use crate::{write_json, CliError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub dr: f64,
    pub cells: usize,
    pub r_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub scenario: String,
    pub config_hash: String,
    pub model_tier: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<String>,
    pub seed: u64,
    pub replicas: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub tolerances: BTreeMap<&'static str, f64>,
    pub artifacts: Vec<String>,
    pub wall_time_s: f64,
    pub result: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, sc: &LoadedScenario) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            scenario: sc.path.clone(),
            config_hash: sc.config_hash.clone(),
            model_tier: sc.scenario.model_tier.to_string(),
            engine: None,
            seed: sc.scenario.numerics.seed,
            replicas: sc.scenario.numerics.replicas,
            grid: None,
            dt: None,
            tolerances: BTreeMap::new(),
            artifacts: Vec::new(),
            wall_time_s: 0.0,
            result: serde_json::Value::Null,
        }
    }

    pub fn finish(
        mut self,
        dir: &Path,
        started: Instant,
        result: impl Serialize,
    ) -> Result<serde_json::Value, CliError> {
        self.wall_time_s = started.elapsed().as_secs_f64();
        self.result = serde_json::to_value(result).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_json(dir, MANIFEST_FILE, &self)?;
        Ok(self.result)
    }
}
