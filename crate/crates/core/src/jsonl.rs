//! Line-delimited JSON files.
//!
//! Appends always write a whole line ending in `\n`. A trailing line without
//! its newline is the remains of an interrupted append and is ignored on
//! read; any other unparsable line is an error.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

impl JsonlError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_owned(), source }
    }
}

/// Parses line-delimited records from a string. `path` is only used in
/// error messages.
pub fn parse_str<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>, JsonlError> {
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.split_terminator('\n').collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i + 1 == lines.len() && !complete => {
                tracing::warn!(path = %path.display(), line = i + 1, "ignoring torn trailing line");
            }
            Err(e) => {
                return Err(JsonlError::Parse { path: path.to_owned(), line: i + 1, message: e.to_string() });
            }
        }
    }
    Ok(out)
}

/// Reads all records; a missing file reads as empty.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    match std::fs::read(path) {
        Ok(bytes) => {
            let text = String::from_utf8_lossy(&bytes);
            parse_str(&text, path)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(JsonlError::io(path, e)),
    }
}

pub fn to_line<T: Serialize>(value: &T) -> String {
    let mut line = serde_json::to_string(value).expect("records serialize");
    line.push('\n');
    line
}

/// Append-only writer. A torn tail left by an earlier crash is cut off
/// before the first append so new records start on a fresh line.
pub struct Appender {
    path: PathBuf,
    file: File,
    sync: bool,
}

impl Appender {
    pub fn open(path: &Path, sync: bool) -> Result<Self, JsonlError> {
        repair_tail(path).map_err(|e| JsonlError::io(path, e))?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| JsonlError::io(path, e))?;
        Ok(Self { path: path.to_owned(), file, sync })
    }

    pub fn append<T: Serialize>(&mut self, value: &T) -> Result<(), JsonlError> {
        self.append_raw(&to_line(value))
    }

    pub fn append_raw(&mut self, line: &str) -> Result<(), JsonlError> {
        debug_assert!(line.ends_with('\n'));
        self.file.write_all(line.as_bytes()).map_err(|e| JsonlError::io(&self.path, e))?;
        if self.sync {
            self.file.sync_data().map_err(|e| JsonlError::io(&self.path, e))?;
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

fn repair_tail(path: &Path) -> io::Result<()> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    tracing::warn!(path = %path.display(), dropped = bytes.len() - keep, "truncating torn trailing line");
    OpenOptions::new().write(true).open(path)?.set_len(keep as u64)
}

/// Writes a whole file of records.
pub fn write_all<T: Serialize>(path: &Path, values: &[T]) -> Result<(), JsonlError> {
    let mut text = String::new();
    for v in values {
        text.push_str(&to_line(v));
    }
    std::fs::write(path, text).map_err(|e| JsonlError::io(path, e))
}
