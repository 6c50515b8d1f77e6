use std::path::Path;

use serde_json::Value;

use super::{read_to_string, DataError};
use crate::domain::{Corpus, Instance, LabeledInstance, RelationName, Role};

const NO_RELATION: &str = "no_relation";

/// Loads a TACRED-style JSON array of records carrying `token`, `relation`
/// and inclusive `subj_start/subj_end/obj_start/obj_end` spans (or explicit
/// `subj`/`obj` strings). `no_relation` records are dropped.
pub fn load_tacred(path: &Path) -> Result<Corpus, DataError> {
    let records: Vec<Value> =
        serde_json::from_str(&read_to_string(path)?).map_err(|e| DataError::parse(path, "file", e))?;
    let no_relation = RelationName::new(NO_RELATION)?;
    let mut items = Vec::new();
    for (index, record) in records.iter().enumerate() {
        let location = || format!("record {index}");
        let raw_relation = record
            .get("relation")
            .and_then(Value::as_str)
            .ok_or_else(|| DataError::parse(path, location(), "missing relation"))?;
        let relation = RelationName::new(raw_relation)?;
        if relation == no_relation {
            continue;
        }
        let tokens: Vec<&str> = record
            .get("token")
            .or_else(|| record.get("tokens"))
            .and_then(Value::as_array)
            .ok_or_else(|| DataError::parse(path, location(), "missing token list"))?
            .iter()
            .map(|t| t.as_str().ok_or_else(|| DataError::parse(path, location(), "non-string token")))
            .collect::<Result<_, _>>()?;
        let head = mention(record, &tokens, "subj").ok_or_else(|| DataError::parse(path, location(), "missing subject"))?;
        let tail = mention(record, &tokens, "obj").ok_or_else(|| DataError::parse(path, location(), "missing object"))?;
        let id = record
            .get("id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("tacred#{index}"));
        items.push(LabeledInstance::new(Instance::new(id, tokens.join(" "), head, tail), relation));
    }
    Ok(Corpus::labeled(Role::Train, items))
}

fn mention(record: &Value, tokens: &[&str], prefix: &str) -> Option<String> {
    if let Some(s) = record.get(prefix).and_then(Value::as_str) {
        return Some(s.to_string()).filter(|s| !s.trim().is_empty());
    }
    let start = record.get(format!("{prefix}_start"))?.as_u64()? as usize;
    let end = record.get(format!("{prefix}_end"))?.as_u64()? as usize;
    (start <= end && end < tokens.len()).then(|| tokens[start..=end].join(" "))
}
