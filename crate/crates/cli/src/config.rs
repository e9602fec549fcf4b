//! `key = value` configuration files.
//!
//! A config file supplies defaults for the attack-style commands: one
//! `key = value` pair per line, `#` starting a comment anywhere. Values from
//! the file are overridden by explicit flags, and keys outside the command's
//! allowlist are rejected so typos fail loudly instead of silently running
//! with defaults.

use anyhow::{bail, Context, Result};
use std::collections::HashMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

/// Keys accepted by `attack`, `sweep`, and `transfer` config files.
pub const ATTACK_KEYS: &[&str] = &[
    "dataset", "model", "models", "frames", "k", "mode", "lambda", "lr", "max-iters", "budget",
    "repeats", "seed", "jobs", "out",
];

/// Parsed contents of a config file (possibly empty when none was given).
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    /// A config carrying no values; every lookup falls through.
    pub fn empty() -> ConfigFile {
        ConfigFile::default()
    }

    /// Loads `path`, accepting only `allowed` keys.
    pub fn load(path: &Path, allowed: &[&str]) -> Result<ConfigFile> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut values = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("{}:{}: expected `key = value`, got {line:?}", path.display(), lineno + 1);
            };
            let key = key.trim();
            let value = value.trim();
            if !allowed.contains(&key) {
                bail!("{}:{}: unknown key {key:?}", path.display(), lineno + 1);
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                bail!("{}:{}: duplicate key {key:?}", path.display(), lineno + 1);
            }
        }
        Ok(ConfigFile { values })
    }

    /// Raw string value for `key`, if the file set one.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parsed value for `key`, if the file set one.
    pub fn parse<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => match raw.parse() {
                Ok(v) => Ok(Some(v)),
                Err(e) => bail!("config key {key}: bad value {raw:?}: {e}"),
            },
        }
    }
}
