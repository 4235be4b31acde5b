//! Platform configuration file (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::safety::SafetyConfig;
use crate::sim::{bundled, ArmModel, SimConfig, WorldSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub bus_port: u16,
    pub http_port: u16,
    /// Bearer token for operator endpoints and full bus access. Generated at
    /// startup when absent.
    pub operator_token: Option<String>,
    /// Slot event log; in-memory when absent.
    pub slot_log: Option<PathBuf>,
    /// Directory served at `/console`.
    pub console_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1".into(),
            bus_port: 7447,
            http_port: 8080,
            operator_token: None,
            slot_log: None,
            console_dir: None,
        }
    }
}

/// A bundled world by name, or a world file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldChoice {
    pub bundled: Option<String>,
    pub path: Option<PathBuf>,
}

impl Default for WorldChoice {
    fn default() -> Self {
        WorldChoice {
            bundled: Some("greenhouse".into()),
            path: None,
        }
    }
}

/// Publication rates of the simulated sensors, Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorRates {
    pub scan_hz: f64,
    pub odom_hz: f64,
    pub joint_states_hz: f64,
    pub frame_hz: f64,
    pub score_hz: f64,
}

impl Default for SensorRates {
    fn default() -> Self {
        SensorRates {
            scan_hz: 10.0,
            odom_hz: 20.0,
            joint_states_hz: 20.0,
            frame_hz: 10.0,
            score_hz: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    pub server: ServerConfig,
    pub world: WorldChoice,
    /// Arm description file; the bundled UR5 when absent.
    pub arm: Option<PathBuf>,
    pub sim: SimConfig,
    pub safety: Option<SafetyConfig>,
    pub sensors: SensorRates,
    /// Seed for tokens and latency draws; random when absent.
    pub seed: Option<u64>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_owned(),
        source,
    })
}

impl PlatformConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&read(path)?)
    }

    pub fn world_spec(&self) -> Result<WorldSpec, ConfigError> {
        match (&self.world.path, &self.world.bundled) {
            (Some(p), _) => WorldSpec::from_json(&read(p)?).map_err(|e| ConfigError::Invalid(e.to_string())),
            (None, Some(name)) => {
                bundled::world(name).ok_or_else(|| ConfigError::Invalid(format!("no bundled world named {name:?}")))
            }
            (None, None) => Err(ConfigError::Invalid("world needs `bundled` or `path`".into())),
        }
    }

    pub fn arm_model(&self) -> Result<ArmModel, ConfigError> {
        match &self.arm {
            Some(p) => ArmModel::from_toml(&read(p)?).map_err(|e| ConfigError::Invalid(e.to_string())),
            None => Ok(bundled::ur5()),
        }
    }

    /// The `[safety]` section, or defaults derived from the arm.
    pub fn safety_config(&self, arm: &ArmModel) -> Result<SafetyConfig, ConfigError> {
        let cfg = self.safety.clone().unwrap_or_else(|| SafetyConfig::for_arm(arm));
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}
