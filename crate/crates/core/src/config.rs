//! Flat `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Keys are unique; a repeated key is an error naming the key.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::ConfigKey {
                    key: line.to_string(),
                    msg: format!("line {}: expected `key = value`", lineno + 1),
                });
            };
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::ConfigKey {
                    key,
                    msg: format!("line {}: empty key", lineno + 1),
                });
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::ConfigKey {
                    key,
                    msg: "duplicate key".into(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V> {
        let raw = self.raw(key).ok_or_else(|| Error::ConfigKey {
            key: key.to_string(),
            msg: "missing".into(),
        })?;
        raw.parse().map_err(|_| Error::ConfigKey {
            key: key.to_string(),
            msg: format!("cannot parse `{raw}`"),
        })
    }

    pub fn get_or<V: FromStr>(&self, key: &str, default: V) -> Result<V> {
        if self.contains(key) {
            self.require(key)
        } else {
            Ok(default)
        }
    }

    pub fn optional<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        if self.contains(key) {
            self.require(key).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Fails with the first key not contained in `allowed`.
    pub fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(Error::ConfigKey {
                key: k.to_string(),
                msg: "unknown key".into(),
            }),
            None => Ok(()),
        }
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in other.iter() {
            self.insert(k, v);
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.iter() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Formats a double with 17 significant digits, enough to round-trip.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let kv = KeyValues::parse("# header\n n_sites = 12 # trailing\n\nb_field=1.0\n").unwrap();
        assert_eq!(kv.require::<usize>("n_sites").unwrap(), 12);
        assert_eq!(kv.require::<f64>("b_field").unwrap(), 1.0);
    }

    #[test]
    fn errors_name_the_key() {
        let kv = KeyValues::parse("j_x = abc").unwrap();
        let err = kv.require::<f64>("j_x").unwrap_err().to_string();
        assert!(err.contains("j_x"), "{err}");
        let err = KeyValues::parse("a = 1\na = 2").unwrap_err().to_string();
        assert!(err.contains("`a`"), "{err}");
        let err = kv.reject_unknown(&["n_sites"]).unwrap_err().to_string();
        assert!(err.contains("j_x"));
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
