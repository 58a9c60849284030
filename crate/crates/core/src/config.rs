//! `key=value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are kept sorted
//! so [`KvConfig::to_text`] is canonical, which is what [`KvConfig::hash`]
//! fingerprints.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::hash::Hasher;
use std::str::FromStr;

use fnv::FnvHasher;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected key=value, got {line:?}"),
                });
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "empty key".into(),
                });
            }
            entries.insert(key.to_string(), v.trim().to_string());
        }
        Ok(KvConfig { entries })
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses `key` if present.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key}={v}: {e}"))))
            .transpose()
    }

    /// Parses `key`, falling back to `default` when absent.
    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.parsed(key)?
            .ok_or_else(|| Error::Config(format!("missing key {key}")))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// 64-bit FNV-1a of the canonical text.
    pub fn hash(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(self.to_text().as_bytes());
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_trims() {
        let c = KvConfig::parse("# run\n epochs = 10\n\nlr=8e-5\n").unwrap();
        assert_eq!(c.get("epochs"), Some("10"));
        assert_eq!(c.parsed::<f64>("lr").unwrap(), Some(8e-5));
        assert_eq!(c.parsed::<usize>("missing").unwrap(), None);
    }

    #[test]
    fn canonical_text_is_order_independent() {
        let a = KvConfig::parse("b=2\na=1").unwrap();
        let b = KvConfig::parse("a=1\nb=2").unwrap();
        assert_eq!(a.to_text(), "a=1\nb=2\n");
        assert_eq!(a.hash(), b.hash());
        let c = KvConfig::parse("a=1\nb=3").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn malformed_line_reports_position() {
        match KvConfig::parse("a=1\nnonsense\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(KvConfig::parse("x=abc").unwrap().parsed::<u32>("x").is_err());
    }
}
