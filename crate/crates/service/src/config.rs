//! Service configuration: one TOML or JSON file, then `IVOS_*` environment
//! overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use ivos_core::EngineConfig;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Directory sessions are saved into; saving is disabled when unset.
    pub data_dir: Option<PathBuf>,
    /// Upper bound on live sessions.
    pub max_sessions: usize,
    pub engine: EngineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: None,
            max_sessions: 64,
            engine: EngineConfig::default(),
        }
    }
}

/// Environment variables read by [`ServiceConfig::apply_env`].
pub const ENV_KEYS: [&str; 8] = [
    "IVOS_PORT",
    "IVOS_CAPACITY",
    "IVOS_TEMPERATURE",
    "IVOS_FUSION_ALPHA",
    "IVOS_FUSION_BETA",
    "IVOS_FUSION_GAMMA",
    "IVOS_SEED",
    "IVOS_DATA_DIR",
];

fn parse<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, ServiceError> {
    raw.trim()
        .parse()
        .map_err(|_| ServiceError::Config(format!("{key}={raw:?} does not parse")))
}

impl ServiceConfig {
    /// Parses a file; `.json` is read as JSON, anything else as TOML.
    pub fn from_file(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("reading {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| ServiceError::Config(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| ServiceError::Config(e.to_string()))
        }
    }

    /// Applies overrides from `lookup` (normally `std::env::var`).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        for key in ENV_KEYS {
            let Some(raw) = lookup(key) else { continue };
            match key {
                "IVOS_PORT" => self.port = parse(key, &raw)?,
                "IVOS_CAPACITY" => self.engine.capacity = parse(key, &raw)?,
                "IVOS_TEMPERATURE" => self.engine.temperature = parse(key, &raw)?,
                "IVOS_FUSION_ALPHA" => self.engine.fusion.alpha = parse(key, &raw)?,
                "IVOS_FUSION_BETA" => self.engine.fusion.beta = parse(key, &raw)?,
                "IVOS_FUSION_GAMMA" => self.engine.fusion.gamma = parse(key, &raw)?,
                "IVOS_SEED" => self.engine.seed = parse(key, &raw)?,
                "IVOS_DATA_DIR" => self.data_dir = Some(PathBuf::from(raw)),
                _ => unreachable!(),
            }
        }
        Ok(())
    }

    /// File (when given) plus process environment, validated.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.max_sessions == 0 {
            return Err(ServiceError::Config("max_sessions must be positive".into()));
        }
        self.engine.validate()?;
        Ok(())
    }

    pub fn addr(&self) -> Result<SocketAddr, ServiceError> {
        format!("{}:{}", self.host, self.port)
            .parse()
            .map_err(|_| ServiceError::Config(format!("bad listen address {}:{}", self.host, self.port)))
    }
}
