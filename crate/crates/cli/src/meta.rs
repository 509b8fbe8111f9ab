//! `key=value` sidecar files describing how an artifact was produced.

use std::fs;
use std::path::Path;

use stdk_core::provenance::{hash_bytes, verify};

use crate::error::{CliError, CliResult, EXIT_FAILURE};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta {
    entries: Vec<(String, String)>,
}

impl Meta {
    pub fn new(kind: &str) -> Self {
        let mut m = Self::default();
        m.set("kind", kind);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> CliResult<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| CliError::new(EXIT_FAILURE, format!("metadata lacks `{key}`")))
    }

    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        self.get(key)?
            .parse()
            .map_err(|_| CliError::new(EXIT_FAILURE, format!("metadata `{key}` is malformed")))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let mut m = Self::default();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::new(EXIT_FAILURE, format!("bad metadata line `{line}`")))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        if !path.is_file() {
            return Err(CliError::missing(path));
        }
        Self::parse(&fs::read_to_string(path)?).map_err(|e| e.at(path))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Fails with a provenance error unless `key` holds `expected`.
    pub fn expect(&self, what: &str, key: &str, expected: &str) -> CliResult<()> {
        verify(&format!("{what} {key}"), expected, self.get(key)?)?;
        Ok(())
    }

    pub fn expect_kind(&self, kind: &str) -> CliResult<()> {
        self.expect("artifact", "kind", kind)
    }
}

/// Reads `path` and checks its SHA-256 against `key` of `meta`.
pub fn read_verified(path: &Path, meta: &Meta, key: &str) -> CliResult<Vec<u8>> {
    if !path.is_file() {
        return Err(CliError::missing(path));
    }
    let bytes = fs::read(path)?;
    meta.expect(&path.display().to_string(), key, &hash_bytes(&bytes))?;
    Ok(bytes)
}
