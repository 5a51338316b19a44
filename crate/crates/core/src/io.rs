//! JSONL file helpers and content digests.

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn file_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::File {
        path: path.display().to_string(),
        source,
    }
}

/// Read one JSON document per line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = fs::File::open(path).map_err(|e| file_err(path, e))?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| file_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| IoError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Write one compact JSON document per line. Output bytes are a pure
/// function of the items.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    let mut out = Vec::new();
    for item in items {
        let line = serde_json::to_string(item).expect("serializable item");
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| file_err(parent, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| file_err(path, e))?;
    file.write_all(bytes).map_err(|e| file_err(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_hex_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trips_and_hashes_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("items.jsonl");
        let items: Vec<serde_json::Value> = vec![
            serde_json::json!({"a": 1}),
            serde_json::json!({"b": [1, 2, 3]}),
        ];
        write_jsonl(&path, &items).unwrap();
        let back: Vec<serde_json::Value> = read_jsonl(&path).unwrap();
        assert_eq!(items, back);
        let h1 = sha256_hex_file(&path).unwrap();
        write_jsonl(&path, &items).unwrap();
        assert_eq!(h1, sha256_hex_file(&path).unwrap());
        assert_eq!(h1.len(), 64);
    }

    #[test]
    fn malformed_line_reports_its_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"ok\":1}\nnot json\n").unwrap();
        let err = read_jsonl::<serde_json::Value>(&path).unwrap_err();
        assert!(err.to_string().contains(":2"));
    }
}
