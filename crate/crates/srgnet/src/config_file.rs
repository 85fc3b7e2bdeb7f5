//! Flat `key = value` configuration files.
//!
//! One setting per line; `#` starts a comment; values may be double-quoted.
//! Keys are the ones listed in [`srgnet_core::config::KEYS`]; anything else
//! is rejected, as is a key given twice in one file. Later sources override
//! earlier ones: defaults, then the file, then `--set` pairs, then `--seed`.

use std::fmt::Write as _;
use std::path::Path;

use srgnet_core::config::RunConfig;

use crate::error::{Error, Result};

/// `(line, key, value)` triples in file order.
pub fn parse_pairs(text: &str, path: &Path) -> Result<Vec<(usize, String, String)>> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line, format!("expected `key = value`, found `{body}`")))?;
        let key = k.trim().to_string();
        let mut value = v.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        if key.is_empty() {
            return Err(Error::parse(path, line, "empty key"));
        }
        if let Some((first, ..)) = out.iter().find(|(_, k, _)| *k == key) {
            return Err(Error::parse(path, line, format!("`{key}` already set on line {first}")));
        }
        out.push((line, key, value.to_string()));
    }
    Ok(out)
}

pub fn apply_text(config: &mut RunConfig, text: &str, path: &Path) -> Result<()> {
    for (line, key, value) in parse_pairs(text, path)? {
        config
            .set(&key, &value)
            .map_err(|e| Error::parse(path, line, e.to_string()))?;
    }
    Ok(())
}

pub fn apply_file(config: &mut RunConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    apply_text(config, &text, path)
}

/// Applies one `key=value` override from the command line.
pub fn apply_override(config: &mut RunConfig, pair: &str) -> Result<()> {
    let (k, v) = pair
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
    config.set(k, v).map_err(|e| Error::Config(e.to_string()))
}

/// The fully resolved configuration in file syntax.
pub fn render(config: &RunConfig) -> String {
    let mut s = String::new();
    for (k, v) in config.entries() {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}
