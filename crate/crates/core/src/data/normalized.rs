//! Line-delimited corpus format: one JSON object per line with fields
//! `id`, `text`, `head`, `tail` and a nullable `relation`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_to_string, DataError};
use crate::domain::{Corpus, Entry, GoldMap, Instance, RelationName, Role};

#[derive(Serialize, Deserialize)]
struct Line {
    id: String,
    text: String,
    head: String,
    tail: String,
    relation: Option<RelationName>,
}

pub fn write_normalized(path: &Path, corpus: &Corpus) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut out = BufWriter::new(file);
    for e in &corpus.entries {
        let line = Line {
            id: e.instance.id.clone(),
            text: e.instance.text.clone(),
            head: e.instance.head.clone(),
            tail: e.instance.tail.clone(),
            relation: e.relation.clone(),
        };
        let json = serde_json::to_string(&line).expect("plain struct serializes");
        writeln!(out, "{json}").map_err(|e| DataError::io(path, e))?;
    }
    out.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_normalized(path: &Path, role: Role) -> Result<Corpus, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&line).map_err(|e| DataError::parse(path, format!("line {}", i + 1), e))?;
        entries.push(Entry {
            instance: Instance::new(parsed.id, parsed.text, parsed.head, parsed.tail),
            relation: parsed.relation,
        });
    }
    Ok(Corpus::from_entries(role, entries))
}

/// Gold sidecar: a JSON object `{id: relation}` in test order.
pub fn write_gold(path: &Path, gold: &GoldMap) -> Result<(), DataError> {
    let json = serde_json::to_string_pretty(gold).expect("map serializes");
    std::fs::write(path, json + "\n").map_err(|e| DataError::io(path, e))
}

pub fn read_gold(path: &Path) -> Result<GoldMap, DataError> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| DataError::parse(path, "file", e))
}
