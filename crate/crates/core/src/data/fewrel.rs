use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use serde_json::Value;

use super::{read_to_string, DataError};
use crate::domain::{Corpus, Instance, LabeledInstance, RelationName, Role};

/// Mapping from raw relation keys (e.g. Wikidata property ids) to readable
/// names, as shipped in FewRel's `pid2name.json`.
pub type RelationNames = HashMap<String, String>;

/// Reads a `{key: [name, description]}` or `{key: name}` mapping.
pub fn load_relation_names(path: &Path) -> Result<RelationNames, DataError> {
    let raw: IndexMap<String, Value> =
        serde_json::from_str(&read_to_string(path)?).map_err(|e| DataError::parse(path, "file", e))?;
    raw.into_iter()
        .map(|(key, value)| {
            let name = match &value {
                Value::String(s) => Some(s.clone()),
                Value::Array(items) => items.first().and_then(Value::as_str).map(str::to_string),
                _ => None,
            };
            name.map(|n| (key.clone(), n))
                .ok_or_else(|| DataError::parse(path, format!("relation {key}"), "expected a name string"))
        })
        .collect()
}

/// Loads a FewRel mapping file: `{relation: [{tokens, h, t}, ...]}` where `h`
/// and `t` are `[name, id, positions]` descriptors. Relation order follows the
/// file.
pub fn load_fewrel(path: &Path, names: Option<&RelationNames>) -> Result<Corpus, DataError> {
    let raw: IndexMap<String, Vec<Value>> =
        serde_json::from_str(&read_to_string(path)?).map_err(|e| DataError::parse(path, "file", e))?;
    let mut items = Vec::new();
    for (key, records) in raw {
        let display = names.and_then(|m| m.get(&key)).map(String::as_str).unwrap_or(&key);
        let relation = RelationName::new(display)?;
        for (index, record) in records.iter().enumerate() {
            let location = || format!("relation {key}, record {index}");
            let tokens = record
                .get("tokens")
                .and_then(Value::as_array)
                .ok_or_else(|| DataError::parse(path, location(), "missing token list"))?;
            let tokens: Vec<&str> = tokens
                .iter()
                .map(|t| t.as_str().ok_or_else(|| DataError::parse(path, location(), "non-string token")))
                .collect::<Result<_, _>>()?;
            let head = entity_name(record, "h").ok_or_else(|| DataError::parse(path, location(), "missing head descriptor"))?;
            let tail = entity_name(record, "t").ok_or_else(|| DataError::parse(path, location(), "missing tail descriptor"))?;
            let instance = Instance::new(format!("{key}#{index}"), tokens.join(" "), head, tail);
            items.push(LabeledInstance::new(instance, relation.clone()));
        }
    }
    Ok(Corpus::labeled(Role::Train, items))
}

fn entity_name(record: &Value, field: &str) -> Option<String> {
    match record.get(field)? {
        Value::Array(parts) => parts.first()?.as_str().map(str::to_string),
        Value::Object(obj) => obj.get("name")?.as_str().map(str::to_string),
        _ => None,
    }
    .filter(|s| !s.trim().is_empty())
}
