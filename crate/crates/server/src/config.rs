//! Settings for `aeos serve` and `aeos export`.
//!
//! Precedence, highest first: command-line flag, `AEOS_*` environment
//! variable, config file, built-in default.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use aeos_core::wire::{from_data, parse, DEFAULT_MODULE_PORT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_HTTP_PORT: u16 = 8080;
pub const DEFAULT_DATA_DIR: &str = "aeos-data";
pub const DEFAULT_KEEPALIVE_SECS: u64 = 15;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path} is not valid JSON: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("config {path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
}

/// The config file: a JSON object whose keys mirror the long flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub http_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub module_port: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keepalive_secs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_slice(&bytes).map_err(|e| match e {
            ConfigError::Parse { detail, .. } => ConfigError::Parse { path: path.into(), detail },
            ConfigError::Invalid { detail, .. } => ConfigError::Invalid { path: path.into(), detail },
            other => other,
        })
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, ConfigError> {
        let value = parse(bytes).map_err(|e| ConfigError::Parse { path: PathBuf::new(), detail: e.to_string() })?;
        from_data(&value).map_err(|e| ConfigError::Invalid { path: PathBuf::new(), detail: e.to_string() })
    }
}

/// Values given on the command line or through the environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub bind: Option<IpAddr>,
    pub http_port: Option<u16>,
    pub module_port: Option<u16>,
    pub data_dir: Option<PathBuf>,
    pub keepalive_secs: Option<u64>,
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub bind: IpAddr,
    pub http_port: u16,
    pub module_port: u16,
    pub data_dir: PathBuf,
    pub keepalive: Duration,
    pub ui_dir: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(over: Overrides, file: FileConfig) -> Result<Self, ConfigError> {
        let file_bind = match &file.bind {
            Some(b) => Some(
                b.parse::<IpAddr>()
                    .map_err(|e| ConfigError::Invalid { path: PathBuf::new(), detail: format!("bind {b:?}: {e}") })?,
            ),
            None => None,
        };
        Ok(Self {
            bind: over.bind.or(file_bind).unwrap_or(IpAddr::V4(Ipv4Addr::LOCALHOST)),
            http_port: over.http_port.or(file.http_port).unwrap_or(DEFAULT_HTTP_PORT),
            module_port: over.module_port.or(file.module_port).unwrap_or(DEFAULT_MODULE_PORT),
            data_dir: over.data_dir.or(file.data_dir).unwrap_or_else(|| DEFAULT_DATA_DIR.into()),
            keepalive: Duration::from_secs(
                over.keepalive_secs.or(file.keepalive_secs).unwrap_or(DEFAULT_KEEPALIVE_SECS).max(1),
            ),
            ui_dir: over.ui_dir.or(file.ui_dir),
        })
    }

    pub fn http_addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.http_port)
    }

    pub fn module_addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.module_port)
    }
}
