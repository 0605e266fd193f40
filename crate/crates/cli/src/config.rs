//! Flag/config-file/default resolution.
//!
//! The config file is flat TOML whose keys are long flag names; `max_new`
//! and `max-new` are the same key.

use std::path::Path;

use serde::de::DeserializeOwned;
use toml::{Table, Value};

use crate::CliError;

pub const SEED_ENV: &str = "AUTOASSERT_SEED";

#[derive(Debug, Default)]
pub struct Config {
    table: Table,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let raw: Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
        let mut table = Table::new();
        for (k, v) in raw {
            if matches!(v, Value::Table(_)) {
                return Err(format!("`{k}`: nested tables are not supported"));
            }
            table.insert(k.replace('_', "-"), v);
        }
        Ok(Self { table })
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.table.get(key) {
            None => Ok(None),
            Some(v) => v.clone().try_into().map(Some).map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))),
        }
    }

    /// Flag if given, else the config value, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    pub fn pick_opt<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    pub fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        self.pick_opt(flag, key)?.ok_or_else(|| CliError::Usage(format!("--{key} is required")))
    }

    /// Seed precedence: flag, config file, `AUTOASSERT_SEED`, then 0.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        if let Some(s) = self.pick_opt(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_config_beat_defaults() {
        let c = Config::parse("steps = 50\nmax_new = 9\nlr = 0.5").unwrap();
        assert_eq!(c.pick(Some(7usize), "steps", 1).unwrap(), 7);
        assert_eq!(c.pick(None, "steps", 1usize).unwrap(), 50);
        assert_eq!(c.pick(None, "batch", 8usize).unwrap(), 8);
        assert_eq!(c.pick(None, "max-new", 1usize).unwrap(), 9);
        assert_eq!(c.pick(None, "lr", 1.0f64).unwrap(), 0.5);
    }

    #[test]
    fn bad_config_is_a_usage_error() {
        assert!(Config::parse("[section]\nx = 1").is_err());
        assert!(Config::parse("steps = ").is_err());
        let c = Config::parse("steps = \"many\"").unwrap();
        assert!(matches!(c.pick(None, "steps", 1usize), Err(CliError::Usage(_))));
    }
}
