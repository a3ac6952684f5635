use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::CliError;

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Resolved configuration of a CSV run, stored next to the data.
pub fn config_sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".config.json");
    PathBuf::from(name)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[String]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Csv { text }
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        let fields: Vec<String> = fields.into_iter().collect();
        self.text.push_str(&fields.join(","));
        self.text.push('\n');
    }

    pub fn finish<C: Serialize>(self, path: &Path, config: &C) -> Result<(), CliError> {
        write_atomic(path, self.text.as_bytes())?;
        write_json(&config_sidecar(path), config)
    }
}
