//! Plain-text `key = value` files used for parameters, scenes and suites.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are unique.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KvError {
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("line {0}: duplicate key {1:?}")]
    Duplicate(usize, String),
    #[error("key {key:?}: cannot parse {value:?}")]
    Value { key: String, value: String },
    #[error("missing key {0:?}")]
    Missing(String),
    #[error("unknown key {0:?}")]
    Unknown(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
}

impl KvMap {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(KvError::Syntax(i + 1))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(KvError::Syntax(i + 1));
            }
            if entries
                .insert(k.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(KvError::Duplicate(i + 1, k.to_string()));
            }
        }
        Ok(Self { entries })
    }

    /// Inserts or replaces one entry.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries
            .insert(key.trim().to_string(), value.trim().to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| KvError::Value {
                key: key.to_string(),
                value: v.clone(),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, KvError> {
        self.get(key)?
            .ok_or_else(|| KvError::Missing(key.to_string()))
    }

    /// Whitespace-separated list of numbers.
    pub fn get_floats(&self, key: &str) -> Result<Option<Vec<f64>>, KvError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| KvError::Value {
                    key: key.to_string(),
                    value: v.clone(),
                }),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Errors on the first key that matches `prefix` but is not in `known`.
    pub fn check_known(&self, prefix: &str, known: &[&str]) -> Result<(), KvError> {
        for k in self.keys() {
            if let Some(rest) = k.strip_prefix(prefix) {
                if !known.contains(&rest) {
                    return Err(KvError::Unknown(k.to_string()));
                }
            }
        }
        Ok(())
    }
}

/// Ordered writer for `key = value` files.
#[derive(Debug, Default)]
pub struct KvWriter {
    out: String,
}

impl KvWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.out, "# {text}");
        self
    }

    pub fn put(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.out, "{key} = {value}");
        self
    }

    pub fn put_floats(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
        self.put(key, joined.join(" "))
    }

    pub fn finish(&self) -> String {
        self.out.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_types_values() {
        let m = KvMap::parse("# c\nstride = 16\n\nname=abc\nv = 1 2.5 -3\n").unwrap();
        assert_eq!(m.get::<usize>("stride").unwrap(), Some(16));
        assert_eq!(m.get_str("name"), Some("abc"));
        assert_eq!(m.get_floats("v").unwrap(), Some(vec![1.0, 2.5, -3.0]));
        assert_eq!(m.get::<usize>("nope").unwrap(), None);
        assert!(m.get::<usize>("name").is_err());
        assert_eq!(m.require::<f64>("zzz"), Err(KvError::Missing("zzz".into())));
    }

    #[test]
    fn rejects_bad_lines() {
        assert_eq!(KvMap::parse("a = 1\njunk\n"), Err(KvError::Syntax(2)));
        assert!(matches!(
            KvMap::parse("a = 1\na = 2\n"),
            Err(KvError::Duplicate(2, _))
        ));
    }

    #[test]
    fn unknown_keys_under_prefix() {
        let m = KvMap::parse("icp.max_iterations = 3\nicp.bogus = 1\nother = 2\n").unwrap();
        assert!(m.check_known("icp.", &["max_iterations"]).is_err());
        assert!(m.check_known("icp.", &["max_iterations", "bogus"]).is_ok());
    }
}
