//! JSONL dataset files for environments and episodes.
//!
//! Every file starts with a `{"format":"ssmnav/v1"}` header record; each
//! following line holds one JSON document. Readers stream line by line, so
//! large episode files never need to fit in memory at once.

use crate::env::{Episode, EnvironmentGraph};
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

pub const FORMAT: &str = "ssmnav/v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("missing format header")]
    MissingHeader,
    #[error("format version mismatch: found '{found}', expected '{expected}'")]
    VersionMismatch { found: String, expected: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = serde_json::to_string(&Header {
        format: FORMAT.to_string(),
    })
    .expect("header serializes");
    writeln!(out, "{header}")?;
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| DatasetError::Parse {
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Streaming JSONL reader. Validates the header eagerly, then yields one
/// record per line without buffering the file.
pub struct JsonlReader<T> {
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: DeserializeOwned> JsonlReader<T> {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let mut lines = BufReader::new(File::open(path)?).lines();
        let first = lines.next().ok_or(DatasetError::MissingHeader)??;
        let header: Header =
            serde_json::from_str(&first).map_err(|_| DatasetError::MissingHeader)?;
        if header.format != FORMAT {
            return Err(DatasetError::VersionMismatch {
                found: header.format,
                expected: FORMAT.to_string(),
            });
        }
        Ok(Self {
            lines,
            line_no: 1,
            _marker: std::marker::PhantomData,
        })
    }
}

impl<T: DeserializeOwned> Iterator for JsonlReader<T> {
    type Item = Result<T, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: self.line_no,
                msg: e.to_string(),
            }));
        }
    }
}

pub fn save_envs(path: &Path, envs: &[EnvironmentGraph]) -> Result<(), DatasetError> {
    write_jsonl(path, envs)
}

pub fn load_envs(path: &Path) -> Result<Vec<EnvironmentGraph>, DatasetError> {
    JsonlReader::<EnvironmentGraph>::open(path)?.collect()
}

pub fn save_episodes(path: &Path, episodes: &[Episode]) -> Result<(), DatasetError> {
    write_jsonl(path, episodes)
}

pub fn stream_episodes(path: &Path) -> Result<JsonlReader<Episode>, DatasetError> {
    JsonlReader::open(path)
}

pub fn load_episodes(path: &Path) -> Result<Vec<Episode>, DatasetError> {
    stream_episodes(path)?.collect()
}
