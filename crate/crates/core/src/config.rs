//! Flat `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored.
//! Sequences are comma-separated. Every value remembers the line it came
//! from so that typed lookups can report errors against the source text.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}` (first set on line {first})")]
    Duplicate {
        line: usize,
        key: String,
        first: usize,
    },
    #[error("line {line}: key `{key}`: cannot parse {value:?} as {expected}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
}

/// Parsed key-value configuration. Keys are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            }
            if let Some(prev) = entries.get(key) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                    first: prev.line,
                });
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.trim().to_string(),
                    line,
                },
            );
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Sets (or replaces) a key; used for command-line overrides. Overrides
    /// carry line 0.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                line: 0,
            },
        );
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.typed(key, "a real number", |s| {
            s.parse::<f64>().ok().filter(|v| v.is_finite())
        })
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.typed(key, "a non-negative integer", |s| s.parse::<usize>().ok())
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.typed(
            key,
            "a comma-separated list of real numbers",
            parse_f64_list,
        )
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.get_f64(key)?
            .ok_or_else(|| ConfigError::Missing(key.into()))
    }

    pub fn require_usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.get_usize(key)?
            .ok_or_else(|| ConfigError::Missing(key.into()))
    }

    pub fn require_f64_list(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        self.get_f64_list(key)?
            .ok_or_else(|| ConfigError::Missing(key.into()))
    }

    fn typed<T>(
        &self,
        key: &str,
        expected: &'static str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<Option<T>, ConfigError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(entry) => parse(&entry.value)
                .map(Some)
                .ok_or_else(|| ConfigError::BadValue {
                    line: entry.line,
                    key: key.to_string(),
                    value: entry.value.clone(),
                    expected,
                }),
        }
    }
}

impl fmt::Display for Config {
    /// Canonical rendering: sorted keys, one `key = value` per line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, e) in &self.entries {
            writeln!(f, "{k} = {}", e.value)?;
        }
        Ok(())
    }
}

/// Parses `"1, 2.5,3"`. Empty items are rejected.
pub fn parse_f64_list(s: &str) -> Option<Vec<f64>> {
    s.split(',')
        .map(|item| item.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect()
}
