//! `key = value` configuration files, turned into command-line flags.

use std::path::Path;

/// Flags accepted as keys, without the leading dashes.
pub const KEYS: &[&str] = &[
    "method", "k", "w-degree", "stab", "tau", "tau-rule", "mesh", "refine", "solution", "labeling", "format",
    "out", "checks", "jobs", "json",
];

/// Reads `path` and returns the equivalent flags in file order.
pub fn flags_from_file(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    flags_from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn flags_from_str(text: &str) -> Result<Vec<String>, String> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
    let mut flags = Vec::new();
    for (key, value) in table {
        let key = key.replace('_', "-");
        if !KEYS.contains(&key.as_str()) {
            return Err(format!("unknown key '{key}'"));
        }
        flags.push(format!("--{key}"));
        flags.push(scalar(&value).ok_or_else(|| format!("unsupported value for '{key}'"))?);
    }
    Ok(flags)
}

fn scalar(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(if *b { "on" } else { "off" }.into()),
        toml::Value::Array(items) => items.iter().map(scalar).collect::<Option<Vec<_>>>().map(|v| v.join(",")),
        _ => None,
    }
}
