//! Sectioned `key = value` files.
//!
//! `#` and `;` start comments at the beginning of a line. Keys outside any section
//! are an error, as are repeated keys and repeated sections.

use std::collections::BTreeMap;

use crate::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::config(format!("line {line_no}: unterminated section header")))?
                    .trim();
                if name.is_empty() {
                    return Err(CliError::config(format!("line {line_no}: empty section name")));
                }
                if ini.sections.contains_key(name) {
                    return Err(CliError::config(format!("line {line_no}: section [{name}] repeated")));
                }
                ini.sections.insert(name.to_string(), BTreeMap::new());
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {line_no}: expected key = value")))?;
            let key = key.trim();
            let section = current
                .as_ref()
                .ok_or_else(|| CliError::config(format!("line {line_no}: key `{key}` outside any section")))?;
            if key.is_empty() {
                return Err(CliError::config(format!("line {line_no}: empty key")));
            }
            let value = value.trim().trim_matches('"').to_string();
            let map = ini.sections.get_mut(section).expect("section exists");
            if map.contains_key(key) {
                return Err(CliError::config(format!("line {line_no}: key `{section}.{key}` repeated")));
            }
            map.insert(key.to_string(), Entry { value, line: line_no });
        }
        Ok(ini)
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(String::as_str)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn keys(&self, section: &str) -> impl Iterator<Item = (&str, &Entry)> {
        self.sections.get(section).into_iter().flat_map(|m| m.iter().map(|(k, e)| (k.as_str(), e)))
    }

    pub fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections.get(section).and_then(|m| m.get(key))
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key).ok_or_else(|| CliError::config(format!("missing key `{section}.{key}`")))
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        let Some(e) = self.entry(section, key) else { return Ok(None) };
        parse_real(&e.value)
            .map(Some)
            .map_err(|m| CliError::config(format!("line {}: `{section}.{key}`: {m}", e.line)))
    }

    pub fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        Ok(self.f64(section, key)?.unwrap_or(default))
    }

    pub fn require_f64(&self, section: &str, key: &str) -> Result<f64> {
        self.f64(section, key)?.ok_or_else(|| CliError::config(format!("missing key `{section}.{key}`")))
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<Option<usize>> {
        let Some(e) = self.entry(section, key) else { return Ok(None) };
        e.value
            .parse()
            .map(Some)
            .map_err(|_| CliError::config(format!("line {}: `{section}.{key}` = {:?} is not a count", e.line, e.value)))
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<Option<u64>> {
        let Some(e) = self.entry(section, key) else { return Ok(None) };
        e.value
            .parse()
            .map(Some)
            .map_err(|_| CliError::config(format!("line {}: `{section}.{key}` = {:?} is not an integer", e.line, e.value)))
    }

    /// Whitespace-separated reals.
    pub fn vector(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.entry(section, key) else { return Ok(None) };
        e.value
            .split_whitespace()
            .map(parse_real)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|m| CliError::config(format!("line {}: `{section}.{key}`: {m}", e.line)))
    }
}

/// A finite real number.
pub fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s:?} is not finite"))
    }
}
