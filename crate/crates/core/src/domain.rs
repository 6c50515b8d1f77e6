//! Core data model shared by every stage: relation names, instances, corpora,
//! pipeline configuration and the candidate/reliable-set records produced
//! during inference.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("relation name {raw:?} is empty after normalization")]
    InvalidRelationName { raw: String },
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
}

/// A relation label in canonical form.
///
/// Canonical form is lowercase, trimmed, with underscores turned into spaces
/// and every whitespace run collapsed to a single space. Two names are equal
/// iff their canonical forms are equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RelationName(String);

impl RelationName {
    pub fn new(raw: &str) -> Result<Self, DomainError> {
        normalize_relation_name(raw)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RelationName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for RelationName {
    type Error = DomainError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        normalize_relation_name(&value)
    }
}

impl From<RelationName> for String {
    fn from(value: RelationName) -> Self {
        value.0
    }
}

impl AsRef<str> for RelationName {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

pub fn normalize_relation_name(raw: &str) -> Result<RelationName, DomainError> {
    let lowered = raw.to_lowercase().replace('_', " ");
    let canonical = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    if canonical.is_empty() {
        return Err(DomainError::InvalidRelationName { raw: raw.to_string() });
    }
    Ok(RelationName(canonical))
}

/// A sentence with its head and tail entity mentions (surface strings).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub text: String,
    pub head: String,
    pub tail: String,
}

impl Instance {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        head: impl Into<String>,
        tail: impl Into<String>,
    ) -> Self {
        Self { id: id.into(), text: text.into(), head: head.into(), tail: tail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub instance: Instance,
    pub relation: RelationName,
}

impl LabeledInstance {
    pub fn new(instance: Instance, relation: RelationName) -> Self {
        Self { instance, relation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

/// One corpus record; `relation` is `None` for unlabeled test instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub instance: Instance,
    pub relation: Option<RelationName>,
}

/// An ordered collection of instances.
///
/// `relation_index` maps each relation to the ids of its instances, in
/// first-appearance order, and is present iff every entry is labeled. It is a
/// plain field so that externally built corpora can be checked with
/// [`validate_corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub role: Role,
    pub entries: Vec<Entry>,
    pub relation_index: Option<IndexMap<RelationName, Vec<String>>>,
}

impl Corpus {
    pub fn labeled(role: Role, items: impl IntoIterator<Item = LabeledInstance>) -> Self {
        Self::from_entries(
            role,
            items
                .into_iter()
                .map(|l| Entry { instance: l.instance, relation: Some(l.relation) })
                .collect(),
        )
    }

    pub fn unlabeled(role: Role, items: impl IntoIterator<Item = Instance>) -> Self {
        Self::from_entries(
            role,
            items.into_iter().map(|instance| Entry { instance, relation: None }).collect(),
        )
    }

    /// Builds a corpus, deriving the relation index when all entries carry a label.
    pub fn from_entries(role: Role, entries: Vec<Entry>) -> Self {
        let relation_index = build_index(&entries);
        Self { role, entries, relation_index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.relation_index.is_some()
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.entries.iter().map(|e| &e.instance)
    }

    /// Relations in first-appearance order (empty for unlabeled corpora).
    pub fn relations(&self) -> Vec<RelationName> {
        self.relation_index.as_ref().map(|idx| idx.keys().cloned().collect()).unwrap_or_default()
    }

    pub fn labeled_instances(&self) -> impl Iterator<Item = LabeledInstance> + '_ {
        self.entries.iter().filter_map(|e| {
            e.relation.as_ref().map(|r| LabeledInstance::new(e.instance.clone(), r.clone()))
        })
    }

    pub fn get(&self, id: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.instance.id == id)
    }
}

fn build_index(entries: &[Entry]) -> Option<IndexMap<RelationName, Vec<String>>> {
    if entries.iter().any(|e| e.relation.is_none()) {
        return None;
    }
    let mut index: IndexMap<RelationName, Vec<String>> = IndexMap::new();
    for e in entries {
        if let Some(rel) = &e.relation {
            index.entry(rel.clone()).or_default().push(e.instance.id.clone());
        }
    }
    Some(index)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    DuplicateId { id: String },
    EmptyField { id: String, field: &'static str },
    /// A labeled instance missing from the index, or an index entry whose
    /// instance is absent or carries a different label.
    IndexMismatch { id: String, relation: RelationName },
    /// The corpus mixes labeled and unlabeled entries but claims an index.
    UnexpectedIndex,
    MissingIndex,
    UnlabeledTrainInstance { id: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut findings = Vec::new();
    let mut seen = HashSet::new();
    for e in &corpus.entries {
        let inst = &e.instance;
        if !seen.insert(inst.id.as_str()) {
            findings.push(Finding::DuplicateId { id: inst.id.clone() });
        }
        for (field, value) in [("id", &inst.id), ("text", &inst.text), ("head", &inst.head), ("tail", &inst.tail)] {
            if value.trim().is_empty() {
                findings.push(Finding::EmptyField { id: inst.id.clone(), field });
            }
        }
        if corpus.role == Role::Train && e.relation.is_none() {
            findings.push(Finding::UnlabeledTrainInstance { id: inst.id.clone() });
        }
    }

    let fully_labeled = corpus.entries.iter().all(|e| e.relation.is_some());
    match (&corpus.relation_index, fully_labeled) {
        (Some(index), true) => {
            let mut indexed: HashMap<&str, Vec<&RelationName>> = HashMap::new();
            for (rel, ids) in index {
                for id in ids {
                    indexed.entry(id.as_str()).or_default().push(rel);
                }
            }
            let labels: HashMap<&str, &RelationName> = corpus
                .entries
                .iter()
                .filter_map(|e| e.relation.as_ref().map(|r| (e.instance.id.as_str(), r)))
                .collect();
            for e in &corpus.entries {
                let rel = e.relation.as_ref().expect("fully labeled");
                let listed = indexed.get(e.instance.id.as_str()).is_some_and(|rs| rs.contains(&rel));
                if !listed {
                    findings.push(Finding::IndexMismatch { id: e.instance.id.clone(), relation: rel.clone() });
                }
            }
            for (rel, ids) in index {
                for id in ids {
                    if labels.get(id.as_str()) != Some(&rel) {
                        findings.push(Finding::IndexMismatch { id: id.clone(), relation: rel.clone() });
                    }
                }
            }
        }
        (Some(_), false) => findings.push(Finding::UnexpectedIndex),
        (None, true) if !corpus.entries.is_empty() => findings.push(Finding::MissingIndex),
        _ => {}
    }
    ValidationReport { findings }
}

/// Test-set labels kept apart from the corpus so they never reach a prompt.
pub type GoldMap = IndexMap<String, RelationName>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Discovery,
    Denoising,
    Prediction,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Discovery => "discovery",
            Stage::Denoising => "denoising",
            Stage::Prediction => "prediction",
        })
    }
}

/// One (instance, relation) hypothesis with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePrediction {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub stage: Stage,
    pub relation: RelationName,
    pub attempt_k: u32,
    pub round: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Consistency {
    /// Every verification must return the candidate relation.
    #[default]
    Unanimous,
    /// More than half of the verifications must return it.
    Majority,
}

impl Consistency {
    pub fn accepts(self, agreeing: usize, total: usize) -> bool {
        match self {
            Consistency::Unanimous => total > 0 && agreeing == total,
            Consistency::Majority => 2 * agreeing > total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliableEntry {
    pub instance_id: String,
    pub attempt_k: u32,
    pub round: u32,
    /// Raw verification outputs, one per denoising batch.
    pub verdicts: Vec<String>,
}

/// Per-relation pools of verified test instances.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReliableSet {
    pub by_relation: BTreeMap<RelationName, Vec<ReliableEntry>>,
}

impl ReliableSet {
    pub fn insert(&mut self, relation: RelationName, entry: ReliableEntry) {
        self.by_relation.entry(relation).or_default().push(entry);
    }

    pub fn len(&self) -> usize {
        self.by_relation.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn relation_of(&self, instance_id: &str) -> Option<&RelationName> {
        self.by_relation
            .iter()
            .find(|(_, entries)| entries.iter().any(|e| e.instance_id == instance_id))
            .map(|(rel, _)| rel)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&RelationName, &ReliableEntry)> {
        self.by_relation.iter().flat_map(|(rel, es)| es.iter().map(move |e| (rel, e)))
    }
}

/// Number of denoising demo batches per candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoBatches {
    /// `ceil((discovered - 1) / (n - 1))`, the fewest batches that cover every
    /// other discovered relation.
    #[default]
    Auto,
    #[serde(untagged)]
    Fixed(usize),
}

impl DemoBatches {
    /// Resolves against the discovered-relation count. A fixed value below the
    /// coverage minimum is raised to the minimum.
    pub fn resolve(self, discovered: usize, n: usize) -> usize {
        let minimum = min_denoise_batches(discovered, n);
        match self {
            DemoBatches::Auto => minimum,
            DemoBatches::Fixed(d) => d.max(minimum),
        }
    }
}

/// Smallest number of batches of `n` relations, each holding the candidate,
/// whose union covers all `discovered` relations. Never below 1.
pub fn min_denoise_batches(discovered: usize, n: usize) -> usize {
    let others = discovered.saturating_sub(1);
    let per_batch = n.saturating_sub(1).max(1);
    others.div_ceil(per_batch).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub discovery_temperature: f32,
    pub denoising_temperature: f32,
    pub prediction_temperature: f32,
    pub stop: Vec<String>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_tokens: 16,
            discovery_temperature: 0.0,
            denoising_temperature: 0.0,
            prediction_temperature: 0.0,
            stop: vec!["\n".to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Demonstrations per prompt.
    pub n: usize,
    /// Discovery attempts per test instance.
    pub k: usize,
    /// Denoising rounds; 0 skips denoising.
    pub t: usize,
    pub d: DemoBatches,
    pub seed: u64,
    pub max_in_flight: usize,
    pub consistency: Consistency,
    pub stop_after: Stage,
    pub generation: GenerationParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n: 4,
            k: 3,
            t: 3,
            d: DemoBatches::Auto,
            seed: 0,
            max_in_flight: 1,
            consistency: Consistency::Unanimous,
            stop_after: Stage::Prediction,
            generation: GenerationParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |msg: &str| Err(DomainError::InvalidConfig(msg.to_string()));
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if self.max_in_flight < 1 {
            return bad("max_in_flight must be positive");
        }
        if let DemoBatches::Fixed(0) = self.d {
            return bad("d must be at least 1");
        }
        if self.generation.max_tokens < 1 {
            return bad("max_tokens must be at least 1");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(s: &str) -> RelationName {
        RelationName::new(s).unwrap()
    }

    fn inst(id: &str) -> Instance {
        Instance::new(id, format!("sentence {id}"), "h", "t")
    }

    #[test]
    fn normalizes_relation_names() {
        assert_eq!(rel("place of birth").as_str(), "place of birth");
        assert_eq!(rel("  Place_Of_Birth ").as_str(), "place of birth");
        assert_eq!(rel("a__b\t c").as_str(), "a b c");
        assert!(matches!(RelationName::new(""), Err(DomainError::InvalidRelationName { .. })));
        assert!(RelationName::new(" _ \n").is_err());
    }

    #[test]
    fn relation_name_deserializes_through_normalization() {
        let r: RelationName = serde_json::from_str("\"Member_Of\"").unwrap();
        assert_eq!(r, rel("member of"));
        assert!(serde_json::from_str::<RelationName>("\"  \"").is_err());
    }

    #[test]
    fn well_formed_corpus_validates() {
        let c = Corpus::labeled(
            Role::Train,
            ["a", "b", "c"].map(|id| LabeledInstance::new(inst(id), rel("r"))),
        );
        assert!(validate_corpus(&c).is_empty());
    }

    #[test]
    fn duplicate_ids_are_reported() {
        let c = Corpus::unlabeled(Role::Test, [inst("a"), inst("a"), inst("b")]);
        let report = validate_corpus(&c);
        assert_eq!(report.findings, vec![Finding::DuplicateId { id: "a".into() }]);
    }

    #[test]
    fn index_omission_is_reported_once() {
        let mut c = Corpus::labeled(
            Role::Train,
            [("a", "r"), ("b", "r"), ("c", "s")].map(|(id, r)| LabeledInstance::new(inst(id), rel(r))),
        );
        c.relation_index.as_mut().unwrap().get_mut(&rel("r")).unwrap().retain(|id| id != "b");
        let report = validate_corpus(&c);
        assert_eq!(report.findings, vec![Finding::IndexMismatch { id: "b".into(), relation: rel("r") }]);
    }

    #[test]
    fn unlabeled_train_and_empty_fields() {
        let c = Corpus::unlabeled(Role::Train, [Instance::new("x", "", "h", "t")]);
        let report = validate_corpus(&c);
        assert!(report.findings.contains(&Finding::EmptyField { id: "x".into(), field: "text" }));
        assert!(report.findings.contains(&Finding::UnlabeledTrainInstance { id: "x".into() }));
    }

    #[test]
    fn demo_batch_resolution() {
        assert_eq!(min_denoise_batches(10, 4), 3);
        assert_eq!(min_denoise_batches(40, 4), 13);
        assert_eq!(min_denoise_batches(4, 4), 1);
        assert_eq!(min_denoise_batches(1, 4), 1);
        assert_eq!(DemoBatches::Fixed(1).resolve(10, 4), 3);
        assert_eq!(DemoBatches::Fixed(5).resolve(10, 4), 5);
    }

    #[test]
    fn consistency_rules() {
        assert!(Consistency::Unanimous.accepts(3, 3));
        assert!(!Consistency::Unanimous.accepts(2, 3));
        assert!(Consistency::Majority.accepts(2, 3));
        assert!(!Consistency::Majority.accepts(2, 4));
    }

    #[test]
    fn default_config_matches_reported_settings() {
        let cfg = PipelineConfig::default();
        assert_eq!((cfg.n, cfg.k, cfg.t), (4, 3, 3));
        assert!(cfg.validate().is_ok());
        assert!(PipelineConfig { n: 1, ..cfg.clone() }.validate().is_err());
        assert!(PipelineConfig { k: 0, ..cfg }.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalization_is_idempotent(raw in "[ a-zA-Z_\t]{0,24}") {
                if let Ok(once) = RelationName::new(&raw) {
                    let twice = RelationName::new(once.as_str()).unwrap();
                    prop_assert_eq!(&once, &twice);
                    prop_assert!(!once.as_str().is_empty());
                }
            }

            #[test]
            fn equality_ignores_case_padding_and_underscores(words in prop::collection::vec("[a-z]{1,6}", 1..4)) {
                let spaced = words.join(" ");
                let variant = format!("  {}\t", words.iter().map(|w| w.to_uppercase()).collect::<Vec<_>>().join("_"));
                prop_assert_eq!(RelationName::new(&spaced).unwrap(), RelationName::new(&variant).unwrap());
            }
        }
    }
}
