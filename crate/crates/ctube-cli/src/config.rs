//! Flat key-value scenario configuration.
//!
//! Format: `[section]` headers and `key = value` lines; `#` starts a comment.
//! Values are scalars, bare words, or bracketed numeric arrays
//! `[a, b, c]` (commas optional). Every parse and validation error carries
//! the line number of the offending entry.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// A parse or validation failure, anchored to a config line when possible.
#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    pub fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

pub type ConfigResult<T> = std::result::Result<T, ConfigError>;

/// A raw entry: the value text and the line it came from.
#[derive(Debug, Clone)]
pub struct Entry {
    pub raw: String,
    pub line: usize,
}

/// Parsed config: `section.key -> entry`, order-preserving per section.
#[derive(Debug, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

impl Config {
    pub fn parse_file(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::general(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> ConfigResult<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    ConfigError::at(line_no, "unterminated section header (missing `]`)")
                })?;
                let name = name.trim();
                if name.is_empty() {
                    return Err(ConfigError::at(line_no, "empty section name"));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::at(line_no, format!("expected `key = value`, got `{line}`"))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::at(line_no, "empty key"));
            }
            if section.is_empty() {
                return Err(ConfigError::at(
                    line_no,
                    format!("key `{key}` appears before any [section] header"),
                ));
            }
            let full = format!("{section}.{key}");
            if entries
                .insert(
                    full.clone(),
                    Entry {
                        raw: value.trim().to_string(),
                        line: line_no,
                    },
                )
                .is_some()
            {
                return Err(ConfigError::at(line_no, format!("duplicate field `{full}`")));
            }
        }
        Ok(Self { entries })
    }

    pub fn has(&self, field: &str) -> bool {
        self.entries.contains_key(field)
    }

    /// True when any key under `[section]` is present.
    pub fn has_section(&self, section: &str) -> bool {
        let prefix = format!("{section}.");
        self.entries.keys().any(|k| k.starts_with(&prefix))
    }

    fn entry(&self, field: &str) -> ConfigResult<&Entry> {
        self.entries
            .get(field)
            .ok_or_else(|| ConfigError::general(format!("missing required field `{field}`")))
    }

    pub fn string(&self, field: &str) -> ConfigResult<String> {
        Ok(self.entry(field)?.raw.clone())
    }

    pub fn f64(&self, field: &str) -> ConfigResult<f64> {
        let e = self.entry(field)?;
        e.raw.parse::<f64>().map_err(|_| {
            ConfigError::at(
                e.line,
                format!("field `{field}`: expected a number, got `{}`", e.raw),
            )
        })
    }

    pub fn usize(&self, field: &str) -> ConfigResult<usize> {
        let e = self.entry(field)?;
        e.raw.parse::<usize>().map_err(|_| {
            ConfigError::at(
                e.line,
                format!("field `{field}`: expected a non-negative integer, got `{}`", e.raw),
            )
        })
    }

    pub fn u64(&self, field: &str) -> ConfigResult<u64> {
        let e = self.entry(field)?;
        e.raw.parse::<u64>().map_err(|_| {
            ConfigError::at(
                e.line,
                format!("field `{field}`: expected an integer, got `{}`", e.raw),
            )
        })
    }

    pub fn vec_f64(&self, field: &str) -> ConfigResult<Vec<f64>> {
        let e = self.entry(field)?;
        let inner = e
            .raw
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| {
                ConfigError::at(
                    e.line,
                    format!("field `{field}`: expected a bracketed array `[..]`"),
                )
            })?;
        inner
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    ConfigError::at(
                        e.line,
                        format!("field `{field}`: `{s}` is not a number"),
                    )
                })
            })
            .collect()
    }

    /// Optional accessors: `Ok(None)` when the field is absent.
    pub fn opt_f64(&self, field: &str) -> ConfigResult<Option<f64>> {
        if self.has(field) {
            self.f64(field).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn opt_usize(&self, field: &str) -> ConfigResult<Option<usize>> {
        if self.has(field) {
            self.usize(field).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn opt_u64(&self, field: &str) -> ConfigResult<Option<u64>> {
        if self.has(field) {
            self.u64(field).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn opt_string(&self, field: &str) -> ConfigResult<Option<String>> {
        if self.has(field) {
            self.string(field).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn opt_vec_f64(&self, field: &str) -> ConfigResult<Option<Vec<f64>>> {
        if self.has(field) {
            self.vec_f64(field).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Line number of a present field (for validation messages about values).
    pub fn line_of(&self, field: &str) -> Option<usize> {
        self.entries.get(field).map(|e| e.line)
    }

    /// A validation error against a present field, anchored to its line.
    pub fn invalid(&self, field: &str, message: impl Into<String>) -> ConfigError {
        match self.line_of(field) {
            Some(line) => ConfigError::at(line, format!("field `{field}`: {}", message.into())),
            None => ConfigError::general(format!("field `{field}`: {}", message.into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_keys_arrays_comments() {
        let c = Config::parse_str(
            "# demo\n[scenario]\nname = demo\n[initial]\nx0 = [1.0, 2.0 3.0]  # inline\n",
        )
        .unwrap();
        assert_eq!(c.string("scenario.name").unwrap(), "demo");
        assert_eq!(c.vec_f64("initial.x0").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(c.has_section("initial"));
        assert!(!c.has_section("nmpc"));
    }

    #[test]
    fn missing_field_names_the_field() {
        let c = Config::parse_str("[scenario]\nname = x\n").unwrap();
        let err = c.f64("integration.dt").unwrap_err();
        assert!(err.to_string().contains("integration.dt"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Config::parse_str("[a]\nkey_without_value\n").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        let err = Config::parse_str("[a]\nx = 1\n[broken\n").unwrap_err();
        assert!(err.to_string().starts_with("line 3:"), "{err}");
        let err = Config::parse_str("x = 1\n").unwrap_err();
        assert!(err.to_string().contains("before any [section]"), "{err}");
    }

    #[test]
    fn bad_number_is_anchored() {
        let c = Config::parse_str("[integration]\ndt = fast\n").unwrap();
        let err = c.f64("integration.dt").unwrap_err();
        assert!(err.to_string().starts_with("line 2:"), "{err}");
        assert!(err.to_string().contains("integration.dt"), "{err}");
    }

    #[test]
    fn duplicate_field_rejected() {
        let err = Config::parse_str("[a]\nx = 1\nx = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }
}
