//! Demonstration sampling for the discoverer (RD) and predictor (RP) roles,
//! prompt rendering, and parsing of generated relation names.

mod pool;
mod sampling;
mod template;

pub use pool::DemoPool;
pub use sampling::{sample_denoise_batches, sample_rd_demos, sample_rp_demos, sample_set_demos};
pub use template::{render_prompt, PromptTemplate, Templates};

use serde::{Deserialize, Serialize};

use crate::domain::{LabeledInstance, RelationName};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("unparseable output: {0:?}")]
    UnparseableOutput(String),
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoMode {
    /// Known-relation demonstrations; the answer must be a new relation.
    Rd,
    /// Demonstrations whose relations are the candidate answers.
    Rp,
}

/// An ordered demonstration list. The candidate relations announced in the
/// prompt are the demo relations, in demo order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoSet {
    pub mode: DemoMode,
    pub demos: Vec<LabeledInstance>,
    /// RP sets built around a designated relation carry it here.
    pub target: Option<RelationName>,
}

impl DemoSet {
    pub fn empty(mode: DemoMode) -> Self {
        Self { mode, demos: Vec::new(), target: None }
    }

    pub fn candidate_relations(&self) -> Vec<&RelationName> {
        self.demos.iter().map(|d| &d.relation).collect()
    }

    pub fn contains_relation(&self, rel: &RelationName) -> bool {
        self.demos.iter().any(|d| &d.relation == rel)
    }

    pub fn contains_instance(&self, id: &str) -> bool {
        self.demos.iter().any(|d| d.instance.id == id)
    }
}

const STRIP: &[char] = &['"', '\'', '`', '“', '”', '‘', '’', '«', '»', '.', ',', ';', ':', '!', '?', '*'];

/// First non-empty line of the output, without an echoed `relationship:`
/// label or surrounding quotes/punctuation, canonicalized.
pub fn parse_generated_relation(raw: &str) -> Result<RelationName, PromptError> {
    let line = raw
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .ok_or_else(|| PromptError::UnparseableOutput(raw.to_string()))?;
    let line = match line.get(..13) {
        Some(p) if p.eq_ignore_ascii_case("relationship:") => &line[13..],
        _ => line,
    };
    let cleaned = line.trim_matches(|c: char| c.is_whitespace() || STRIP.contains(&c));
    RelationName::new(cleaned).map_err(|_| PromptError::UnparseableOutput(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_first_line() {
        let r = parse_generated_relation("place of birth\nExplanation: the text says so").unwrap();
        assert_eq!(r.as_str(), "place of birth");
    }

    #[test]
    fn strips_quotes_and_punctuation() {
        assert_eq!(parse_generated_relation("\"Director\".").unwrap().as_str(), "director");
        assert_eq!(parse_generated_relation(" relationship: 'org:founded_by'").unwrap().as_str(), "org:founded by");
    }

    #[test]
    fn blank_output_is_unparseable() {
        assert!(matches!(parse_generated_relation("\n\n"), Err(PromptError::UnparseableOutput(_))));
        assert!(matches!(parse_generated_relation(" \"\". "), Err(PromptError::UnparseableOutput(_))));
    }
}
