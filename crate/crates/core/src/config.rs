//! Line-oriented `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are dotted paths
//! such as `skill.walk.max_ascend`. Later assignments override earlier ones.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found `{text}`")]
    Syntax { line: usize, text: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    Invalid { key: String, value: String },
    #[error("{0}")]
    Semantic(String),
}

/// Built-in defaults: robot, skill profiles, thresholds, collection and
/// training parameters.
pub const DEFAULT_CONFIG: &str = include_str!("default.conf");

pub fn default_config() -> KvConfig {
    KvConfig::parse(DEFAULT_CONFIG).expect("built-in config parses")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            cfg.apply(line).map_err(|_| ConfigError::Syntax { line: idx + 1, text: raw.to_string() })?;
        }
        Ok(cfg)
    }

    /// Apply a single `key=value` assignment.
    pub fn apply(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: 0, text: assignment.to_string() })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line: 0, text: assignment.to_string() });
        }
        self.entries.insert(key.to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::Invalid { key: key.to_string(), value: v.clone() }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.get(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    /// Distinct second path components under `prefix.`, in sorted order.
    pub fn sections(&self, prefix: &str) -> Vec<String> {
        let head = format!("{prefix}.");
        let mut out: Vec<String> = Vec::new();
        for key in self.entries.keys() {
            if let Some(rest) = key.strip_prefix(&head) {
                let name = rest.split('.').next().unwrap_or(rest).to_string();
                if out.last() != Some(&name) && !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }

    /// Canonical text: sorted `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn merge(&mut self, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = KvConfig::parse("# header\n a = 1\n\nb.c = x y\na=2\n").unwrap();
        assert_eq!(cfg.get::<i32>("a").unwrap(), Some(2));
        assert_eq!(cfg.raw("b.c"), Some("x y"));
        assert_eq!(cfg.get::<i32>("zz").unwrap(), None);
    }

    #[test]
    fn reports_line_of_syntax_error() {
        let err = KvConfig::parse("a = 1\nnonsense\n").unwrap_err();
        assert_eq!(err, ConfigError::Syntax { line: 2, text: "nonsense".into() });
    }

    #[test]
    fn invalid_value_names_key() {
        let cfg = KvConfig::parse("mass = heavy").unwrap();
        assert!(matches!(cfg.get::<f64>("mass"), Err(ConfigError::Invalid { .. })));
        assert!(matches!(cfg.require::<f64>("nope"), Err(ConfigError::Missing(_))));
    }

    #[test]
    fn sections_are_unique_and_sorted() {
        let cfg = KvConfig::parse("skill.walk.a=1\nskill.walk.b=2\nskill.ascend.a=3\nother=1").unwrap();
        assert_eq!(cfg.sections("skill"), vec!["ascend".to_string(), "walk".to_string()]);
    }

    #[test]
    fn text_round_trip() {
        let cfg = KvConfig::parse("b=2\na=1").unwrap();
        assert_eq!(KvConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
