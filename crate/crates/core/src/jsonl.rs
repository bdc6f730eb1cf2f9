//! Line-oriented JSON records: one UTF-8 JSON object per line.

use std::fs;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded<T> {
    pub records: Vec<T>,
    pub errors: Vec<LineError>,
}

impl<T> Decoded<T> {
    pub fn into_result(self) -> Result<Vec<T>, LineError> {
        match self.errors.into_iter().next() {
            Some(e) => Err(e),
            None => Ok(self.records),
        }
    }
}

pub fn encode<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        // Derived Serialize impls over strings, numbers and maps cannot fail.
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    out
}

pub fn encode_one<T: Serialize>(record: &T) -> String {
    serde_json::to_string(record).expect("record serializes")
}

/// Decodes every line independently; blank lines are skipped.
pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Decoded<T> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let parsed = std::str::from_utf8(line)
            .map_err(|e| e.to_string())
            .and_then(|s| serde_json::from_str::<T>(s).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => records.push(r),
            Err(message) => errors.push(LineError {
                line: i + 1,
                message,
            }),
        }
    }
    Decoded { records, errors }
}

pub fn read_file<T: DeserializeOwned>(path: &Path) -> io::Result<Decoded<T>> {
    Ok(decode(&fs::read(path)?))
}

pub fn write_file<T: Serialize>(path: &Path, records: &[T]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, encode(records))
}
