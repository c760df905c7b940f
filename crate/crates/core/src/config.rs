//! Flat `key=value` configuration with dotted sections.
//!
//! ```text
//! # comment
//! model.name=fhn
//! noise.kernel=gaussian
//! noise.sigma=0.1
//! solver.scheme=semi_implicit
//! converge.resolutions=32,64,128
//! ```
//!
//! Every typed lookup records the value it resolved to (including defaults),
//! so output files can echo the effective configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;
use std::sync::Mutex;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
    resolved: Mutex<BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "line {}: expected `key=value`, found `{line}`",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            cfg.entries
                .insert(key.to_string(), value.trim().to_string());
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not `key=value`")))?;
        self.set(key.trim(), value.trim());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn note(&self, key: &str, value: &str) {
        self.resolved
            .lock()
            .expect("config lock")
            .insert(key.to_string(), value.to_string());
    }

    pub fn require_str(&self, key: &str) -> Result<String> {
        let value = self
            .entries
            .get(key)
            .ok_or_else(|| Error::Config(format!("missing required key `{key}`")))?;
        self.note(key, value);
        Ok(value.clone())
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        let value = self.entries.get(key).map(String::as_str).unwrap_or(default);
        self.note(key, value);
        value.to_string()
    }

    fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T>
    where
        T::Err: Display,
    {
        raw.parse::<T>()
            .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{raw}`: {e}")))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.require_str(key)?;
        Self::parse_value(key, &raw)
    }

    pub fn get_or<T: FromStr + Display>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            Some(raw) => {
                self.note(key, raw);
                Self::parse_value(key, raw)
            }
            None => {
                self.note(key, &default.to_string());
                Ok(default)
            }
        }
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            Some(raw) => {
                self.note(key, raw);
                Self::parse_value(key, raw).map(Some)
            }
            None => Ok(None),
        }
    }

    /// Comma-separated list.
    pub fn list_or<T: FromStr + Display>(&self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            Some(raw) => {
                self.note(key, raw);
                raw.split(',')
                    .map(|item| Self::parse_value(key, item.trim()))
                    .collect()
            }
            None => {
                let text = default
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(",");
                self.note(key, &text);
                default
                    .iter()
                    .map(|d| Self::parse_value(key, &d.to_string()))
                    .collect()
            }
        }
    }

    pub fn require_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let raw = self.require_str(key)?;
        raw.split(',')
            .map(|item| Self::parse_value(key, item.trim()))
            .collect()
    }

    /// `# key=value` lines for every resolved key, sorted by key.
    pub fn echo(&self) -> String {
        self.resolved
            .lock()
            .expect("config lock")
            .iter()
            .map(|(k, v)| format!("# {k}={v}\n"))
            .collect()
    }
}
