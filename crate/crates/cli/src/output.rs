//! Deterministic artifact writers: numbers at 17 significant digits,
//! hand-rolled flat JSON, CSV, and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;

use crate::config::ResolvedConfig;

/// 17 significant digits, Rust scientific layout (no exponent padding).
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_bool(v: bool) -> &'static str {
    if v {
        "true"
    } else {
        "false"
    }
}

/// One JSON value in a flat ordered object.
pub enum JsonValue {
    Num(f64),
    Int(u64),
    Bool(bool),
    Str(String),
}

/// Flat JSON object with the fields in the given order, one per line.
pub fn json_object(fields: &[(&str, JsonValue)]) -> String {
    let mut out = String::from("{\n");
    for (i, (key, value)) in fields.iter().enumerate() {
        let comma = if i + 1 < fields.len() { "," } else { "" };
        match value {
            JsonValue::Num(v) => {
                let _ = writeln!(out, "  \"{key}\": {}{comma}", fmt17(*v));
            }
            JsonValue::Int(v) => {
                let _ = writeln!(out, "  \"{key}\": {v}{comma}");
            }
            JsonValue::Bool(v) => {
                let _ = writeln!(out, "  \"{key}\": {}{comma}", fmt_bool(*v));
            }
            JsonValue::Str(v) => {
                let _ = writeln!(out, "  \"{key}\": \"{}\"{comma}", escape_json(v));
            }
        }
    }
    out.push_str("}\n");
    out
}

fn escape_json(s: &str) -> String {
    s.chars()
        .flat_map(|c| match c {
            '"' => "\\\"".chars().collect::<Vec<_>>(),
            '\\' => "\\\\".chars().collect(),
            '\n' => "\\n".chars().collect(),
            c => vec![c],
        })
        .collect()
}

/// CSV with a header row; every numeric cell already formatted.
pub struct Csv {
    buf: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Csv {
            buf,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "csv row width mismatch");
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// Vector cell: semicolon-separated 17-digit components.
pub fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt17(*x)).collect::<Vec<_>>().join(";")
}

pub fn write_artifact(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Manifest echoing the fully resolved config, the tool version and the
/// wall time. Identical runs produce byte-identical manifests except for
/// the wall-time field.
pub fn manifest(config: &ResolvedConfig, wall_time_ms: u128) -> String {
    let mut out = String::from("{\n");
    let _ = writeln!(out, "  \"tool_version\": \"{}\",", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "  \"wall_time_ms\": {wall_time_ms},");
    out.push_str("  \"config\": {\n");
    let n = config.entries.len();
    for (i, (key, value)) in config.entries.iter().enumerate() {
        let comma = if i + 1 < n { "," } else { "" };
        let _ = writeln!(out, "    \"{key}\": \"{}\"{comma}", escape_json(value));
    }
    out.push_str("  }\n}\n");
    out
}
