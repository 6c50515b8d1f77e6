use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::InferError;
use crate::domain::CandidatePrediction;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> InferError + '_ {
    move |source| InferError::Io { path: path.to_path_buf(), source }
}

/// One compact JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), InferError> {
    let file = std::fs::File::create(path).map_err(io(path))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).expect("trace records serialize");
        writeln!(out, "{line}").map_err(io(path))?;
    }
    out.flush().map_err(io(path))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), InferError> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    std::fs::write(path, text + "\n").map_err(io(path))
}

/// Reads a prediction file written by a run.
pub fn read_predictions(path: &Path) -> Result<Vec<CandidatePrediction>, InferError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| InferError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)),
            })
        })
        .collect()
}
