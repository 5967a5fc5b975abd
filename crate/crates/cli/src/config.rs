//! Plain-text `key = value` configuration files. Flags override file values.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::UsageError;

#[derive(Debug, Default)]
pub struct ConfigFile {
    source: String,
    values: BTreeMap<String, (usize, String)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, UsageError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("{source}:{}: expected key = value", i + 1)))?;
            let key = normalize(key);
            if values
                .insert(key.clone(), (i + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(UsageError(format!(
                    "{source}:{}: duplicate key {key}",
                    i + 1
                )));
            }
        }
        Ok(Self {
            source: source.to_string(),
            values,
        })
    }

    /// Removes and parses `key`; absent keys yield `None`.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>, UsageError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| {
                UsageError(format!(
                    "{}:{line}: invalid value for {key}: {e}",
                    self.source
                ))
            }),
        }
    }

    /// Fails on keys that no `take` consumed.
    pub fn finish(self) -> Result<(), UsageError> {
        match self.values.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(UsageError(format!(
                "{}:{line}: unknown key {key}",
                self.source
            ))),
        }
    }
}
