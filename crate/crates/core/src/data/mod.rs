//! Dataset ingestion, known/new splitting and the normalized corpus format.

mod fewrel;
mod normalized;
mod split;
mod synthetic;
mod tacred;

use std::path::{Path, PathBuf};

pub use fewrel::{load_fewrel, load_relation_names, RelationNames};
pub use normalized::{read_gold, read_normalized, write_gold, write_normalized};
pub use split::{build_fewrel_lt, long_tail_target, split_known_new, Split, SplitSpec};
pub use synthetic::synthetic_corpus;
pub use tacred::load_tacred;

use crate::domain::{DomainError, RelationName};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {location}: {message}")]
    Parse { path: PathBuf, location: String, message: String },
    #[error("split error: {0}")]
    Split(String),
    #[error("relation {relation} has {available} instances, {required} required")]
    InsufficientInstances { relation: RelationName, available: usize, required: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io { path: path.to_path_buf(), source }
    }

    fn parse(path: &Path, location: impl Into<String>, message: impl ToString) -> Self {
        DataError::Parse { path: path.to_path_buf(), location: location.into(), message: message.to_string() }
    }
}

fn read_to_string(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))
}
