//! Flag resolution with config-file fallback.
//!
//! Precedence is flags > config file > built-in defaults. Flags land in an
//! [`ArgMap`] first; `merge_config` fills only the keys the command line
//! left unset; the exec layer materializes defaults as it reads values. The
//! fully resolved map is what the run manifest records, so a stored
//! manifest replays without consulting any config file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use nuadv::error::{Error, Result};

/// String-keyed resolved arguments. Keys are the long flag names.
#[derive(Debug, Clone, Default)]
pub struct ArgMap {
    values: BTreeMap<String, String>,
}

impl ArgMap {
    pub fn new() -> Self {
        ArgMap::default()
    }

    pub fn from_stored(values: BTreeMap<String, String>) -> Self {
        ArgMap { values }
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Record a flag value (only called for flags the user actually passed).
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt(&mut self, key: &str, value: &Option<impl Display>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Fill unset keys from a `key = value` config file. Lines are trimmed,
    /// `#` starts a comment, blank lines are skipped.
    pub fn merge_config(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Schema(format!(
                    "{}:{}: expected 'key = value', got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Schema(format!(
                    "{}:{}: empty key",
                    path.display(),
                    lineno + 1
                )));
            }
            if !self.contains(key) {
                self.values.insert(key.to_string(), value.trim().to_string());
            }
        }
        Ok(())
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T>
    where
        T::Err: Display,
    {
        raw.parse().map_err(|e| {
            Error::Schema(format!("argument '{key}': cannot parse '{raw}': {e}"))
        })
    }

    /// Typed value that must be present by now (flag or config).
    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            Some(raw) => self.parse(key, raw),
            None => Err(Error::Schema(format!("missing required argument '{key}'"))),
        }
    }

    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            Some(raw) => Ok(Some(self.parse(key, raw)?)),
            None => Ok(None),
        }
    }

    /// Typed value, materializing `default` into the map when unset so the
    /// manifest records every hyperparameter explicitly.
    pub fn or_default<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        if !self.contains(key) {
            self.values.insert(key.to_string(), default.to_string());
        }
        self.require(key)
    }

    pub fn inner(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}
