//! Flat `section.key = value` configuration with flag overrides.
//!
//! A config file holds one key per line; `#` starts a comment. Command-line
//! flags override file values via [`Config::set_override`], and the resolved
//! map (file plus overrides) is what the run manifest snapshots.

use std::collections::BTreeMap;
use std::path::Path;

use mtsc_core::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    /// Loads a config file; `None` yields an empty config.
    pub fn load(path: Option<&Path>) -> Result<Config> {
        let mut config = Config::default();
        let Some(path) = path else {
            return Ok(config);
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("expected `section.key = value`, got {line:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() || !key.contains('.') {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("keys are `section.key`, got {key:?}"),
                });
            }
            if config.values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(config)
    }

    /// Flag override; wins over the file value.
    pub fn set_override(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(key.to_string(), value.into());
    }

    /// The resolved configuration, for the manifest.
    pub fn snapshot(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse::<usize>().map_err(|_| {
                Error::invalid(format!("config {key} must be a non-negative integer, got {raw:?}"))
            }),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse::<u64>().map_err(|_| {
                Error::invalid(format!("config {key} must be a non-negative integer, got {raw:?}"))
            }),
        }
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64> {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("config {key} must be a number, got {raw:?}"))),
        }
    }

    /// `on`/`off` switch.
    pub fn get_switch(&self, key: &str, default: bool) -> Result<bool> {
        match self.values.get(key).map(|s| s.as_str()) {
            None => Ok(default),
            Some("on") => Ok(true),
            Some("off") => Ok(false),
            Some(other) => {
                Err(Error::invalid(format!("config {key} must be on or off, got {other:?}")))
            }
        }
    }
}
