//! Flat INI-style experiment configuration.
//!
//! Sections hold `key = value` pairs; expression strings are double-quoted.
//! `[model]` describes the diffusion, `[operation]` selects exactly one
//! operation and its structural parameters, `[numeric]` carries dt/T/N/grids
//! and the mandatory seed, `[output]` the artifact paths. Resolution
//! materializes every default, and a resolved config serializes back to an
//! INI text that parses to an identical resolved config.

use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "config error at line {} (field `{}`): {}",
            self.line, self.field, self.message
        )
    }
}

impl std::error::Error for ConfigError {}

fn err(line: usize, field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

/// Raw parsed INI: section -> key -> (value, line).
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RawConfig::default();
        let mut current = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = strip_comment(raw_line).trim().to_string();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(err(lineno, "", "unterminated section header"));
                }
                current = line[1..line.len() - 1].trim().to_string();
                if current.is_empty() {
                    return Err(err(lineno, "", "empty section name"));
                }
                cfg.sections.entry(current.clone()).or_default();
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(err(lineno, "", format!("expected `key = value`, got `{line}`")));
            };
            if current.is_empty() {
                return Err(err(lineno, "", "key outside of any [section]"));
            }
            let key = line[..eq].trim().to_string();
            let mut value = line[eq + 1..].trim().to_string();
            if value.starts_with('"') && value.ends_with('"') && value.len() >= 2 {
                value = value[1..value.len() - 1].to_string();
            }
            if key.is_empty() {
                return Err(err(lineno, "", "empty key"));
            }
            let section = cfg.sections.entry(current.clone()).or_default();
            if section.insert(key.clone(), (value, lineno)).is_some() {
                return Err(err(lineno, &key, "duplicate key"));
            }
        }
        Ok(cfg)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&(String, usize)> {
        self.sections.get(section)?.get(key)
    }

    pub fn section_keys(&self, section: &str) -> Vec<String> {
        self.sections
            .get(section)
            .map(|s| s.keys().cloned().collect())
            .unwrap_or_default()
    }
}

fn strip_comment(line: &str) -> &str {
    // comments start with # or ; outside of quotes
    let mut in_quotes = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_quotes = !in_quotes,
            '#' | ';' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Typed reader over a raw config that tracks which keys were consumed, so
/// unknown keys can be diagnosed.
pub struct Reader<'a> {
    raw: &'a RawConfig,
    consumed: std::cell::RefCell<BTreeMap<String, Vec<String>>>,
}

impl<'a> Reader<'a> {
    pub fn new(raw: &'a RawConfig) -> Self {
        Reader {
            raw,
            consumed: Default::default(),
        }
    }

    fn mark(&self, section: &str, key: &str) {
        self.consumed
            .borrow_mut()
            .entry(section.to_string())
            .or_default()
            .push(key.to_string());
    }

    pub fn optional_str(&self, section: &str, key: &str) -> Option<String> {
        self.mark(section, key);
        self.raw.get(section, key).map(|(v, _)| v.clone())
    }

    pub fn require_str(&self, section: &str, key: &str) -> Result<String, ConfigError> {
        self.optional_str(section, key)
            .ok_or_else(|| err(0, &format!("{section}.{key}"), "missing required key"))
    }

    pub fn optional_f64(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        self.mark(section, key);
        match self.raw.get(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| err(*line, &format!("{section}.{key}"), format!("not a number: `{v}`"))),
        }
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.optional_f64(section, key)?.unwrap_or(default))
    }

    pub fn require_f64(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        self.optional_f64(section, key)?
            .ok_or_else(|| err(0, &format!("{section}.{key}"), "missing required key"))
    }

    pub fn optional_u64(&self, section: &str, key: &str) -> Result<Option<u64>, ConfigError> {
        self.mark(section, key);
        match self.raw.get(section, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<u64>()
                .map(Some)
                .map_err(|_| err(*line, &format!("{section}.{key}"), format!("not an integer: `{v}`"))),
        }
    }

    pub fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        Ok(self.optional_u64(section, key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.mark(section, key);
        match self.raw.get(section, key) {
            None => Ok(default),
            Some((v, line)) => match v.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(err(*line, &format!("{section}.{key}"), "expected true/false")),
            },
        }
    }

    /// Comma-separated f64 vector.
    pub fn optional_vec(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.mark(section, key);
        match self.raw.get(section, key) {
            None => Ok(None),
            Some((v, line)) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    out.push(part.trim().parse::<f64>().map_err(|_| {
                        err(*line, &format!("{section}.{key}"), format!("bad vector entry `{part}`"))
                    })?);
                }
                Ok(Some(out))
            }
        }
    }

    /// `lo:hi:count` evenly spaced grid.
    pub fn optional_linspace(
        &self,
        section: &str,
        key: &str,
    ) -> Result<Option<(f64, f64, usize)>, ConfigError> {
        self.mark(section, key);
        match self.raw.get(section, key) {
            None => Ok(None),
            Some((v, line)) => {
                let parts: Vec<&str> = v.split(':').collect();
                if parts.len() != 3 {
                    return Err(err(
                        *line,
                        &format!("{section}.{key}"),
                        "expected `lo:hi:count`",
                    ));
                }
                let lo = parts[0].trim().parse::<f64>().map_err(|_| {
                    err(*line, &format!("{section}.{key}"), "bad lower bound")
                })?;
                let hi = parts[1].trim().parse::<f64>().map_err(|_| {
                    err(*line, &format!("{section}.{key}"), "bad upper bound")
                })?;
                let count = parts[2].trim().parse::<usize>().map_err(|_| {
                    err(*line, &format!("{section}.{key}"), "bad count")
                })?;
                if count == 0 {
                    return Err(err(*line, &format!("{section}.{key}"), "count must be >= 1"));
                }
                Ok(Some((lo, hi, count)))
            }
        }
    }

    /// Expression parameters: every key of the form `param.<name>`.
    pub fn expr_params(&self, section: &str) -> Result<BTreeMap<String, f64>, ConfigError> {
        let mut out = BTreeMap::new();
        for key in self.raw.section_keys(section) {
            if let Some(name) = key.strip_prefix("param.") {
                let (v, line) = self.raw.get(section, &key).unwrap();
                self.mark(section, &key);
                let value = v.parse::<f64>().map_err(|_| {
                    err(*line, &format!("{section}.{key}"), format!("not a number: `{v}`"))
                })?;
                out.insert(name.to_string(), value);
            }
        }
        Ok(out)
    }

    /// Reject keys that were never consumed by the typed readers.
    pub fn reject_unknown(&self) -> Result<(), ConfigError> {
        let consumed = self.consumed.borrow();
        for (section, keys) in &self.raw.sections {
            let seen = consumed.get(section);
            for (key, (_, line)) in keys {
                let known = seen.map(|s| s.iter().any(|k| k == key)).unwrap_or(false);
                if !known {
                    return Err(err(
                        *line,
                        &format!("{section}.{key}"),
                        "unknown key for this operation",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Canonical resolved configuration: a sorted flat key/value map with all
/// defaults materialized. Serializing and re-parsing yields the same map.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ResolvedConfig {
    pub entries: BTreeMap<String, String>,
}

impl ResolvedConfig {
    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.entries
            .insert(format!("{section}.{key}"), value.into());
    }

    pub fn set_f64(&mut self, section: &str, key: &str, value: f64) {
        self.set(section, key, crate::output::fmt17(value));
    }

    pub fn to_ini(&self) -> String {
        let mut by_section: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
        for (path, value) in &self.entries {
            let (section, key) = path.split_once('.').unwrap_or(("", path.as_str()));
            by_section.entry(section).or_default().push((key, value));
        }
        let mut out = String::new();
        for (section, entries) in by_section {
            let _ = writeln!(out, "[{section}]");
            for (key, value) in entries {
                if value.chars().any(|c| c.is_whitespace() || c == '#' || c == ';') {
                    let _ = writeln!(out, "{key} = \"{value}\"");
                } else {
                    let _ = writeln!(out, "{key} = {value}");
                }
            }
            let _ = writeln!(out);
        }
        out
    }
}
