use std::collections::HashSet;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::domain::{Corpus, Entry, GoldMap, RelationName, Role};
use crate::seed::SeedStream;

/// Which relations are known (training) and which are new (test).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub known_relations: Vec<RelationName>,
    pub new_relations: Vec<RelationName>,
    /// Also place held-out instances of known relations in the test pool.
    #[serde(default)]
    pub mixed_test: bool,
    /// Fraction of each known relation held out when `mixed_test` is set.
    #[serde(default = "default_holdout")]
    pub mixed_holdout: f64,
}

fn default_holdout() -> f64 {
    0.2
}

impl SplitSpec {
    /// The first `known` relations of the corpus (file order) are known; the rest are new.
    pub fn first_known(corpus: &Corpus, known: usize) -> Self {
        let relations = corpus.relations();
        let cut = known.min(relations.len());
        Self {
            known_relations: relations[..cut].to_vec(),
            new_relations: relations[cut..].to_vec(),
            mixed_test: false,
            mixed_holdout: default_holdout(),
        }
    }
}

/// A sealed split: test labels live only in `gold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Corpus,
    pub test: Corpus,
    pub gold: GoldMap,
}

fn check_spec(corpus: &Corpus, spec: &SplitSpec) -> Result<(), DataError> {
    let index = corpus
        .relation_index
        .as_ref()
        .ok_or_else(|| DataError::Split("corpus is not fully labeled".into()))?;
    let known: HashSet<_> = spec.known_relations.iter().collect();
    let new: HashSet<_> = spec.new_relations.iter().collect();
    if known.len() != spec.known_relations.len() || new.len() != spec.new_relations.len() {
        return Err(DataError::Split("relation listed twice".into()));
    }
    if let Some(r) = known.intersection(&new).next() {
        return Err(DataError::Split(format!("relation {r} is both known and new")));
    }
    for r in spec.known_relations.iter().chain(&spec.new_relations) {
        if !index.contains_key(r) {
            return Err(DataError::Split(format!("unknown relation {r}")));
        }
    }
    if let Some(r) = index.keys().find(|r| !known.contains(r) && !new.contains(r)) {
        return Err(DataError::Split(format!("relation {r} is neither known nor new")));
    }
    if !(0.0..=1.0).contains(&spec.mixed_holdout) {
        return Err(DataError::Split("mixed_holdout must lie in [0, 1]".into()));
    }
    Ok(())
}

fn entries_of<'a>(corpus: &'a Corpus, relation: &RelationName) -> Vec<&'a Entry> {
    corpus.entries.iter().filter(|e| e.relation.as_ref() == Some(relation)).collect()
}

fn seal(test_entries: Vec<Entry>) -> (Corpus, GoldMap) {
    let mut gold = GoldMap::new();
    let instances: Vec<_> = test_entries
        .into_iter()
        .map(|e| {
            if let Some(r) = e.relation {
                gold.insert(e.instance.id.clone(), r);
            }
            e.instance
        })
        .collect();
    (Corpus::unlabeled(Role::Test, instances), gold)
}

/// Builds a known/new split. With `mixed_test`, the last
/// `ceil(mixed_holdout * count)` instances of each known relation move to the
/// test pool.
pub fn split_known_new(corpus: &Corpus, spec: &SplitSpec) -> Result<Split, DataError> {
    check_spec(corpus, spec)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for rel in &spec.known_relations {
        let entries = entries_of(corpus, rel);
        let held = if spec.mixed_test {
            (spec.mixed_holdout * entries.len() as f64).ceil() as usize
        } else {
            0
        };
        let keep = entries.len() - held.min(entries.len());
        train.extend(entries[..keep].iter().map(|e| (*e).clone()));
        test.extend(entries[keep..].iter().map(|e| (*e).clone()));
    }
    for rel in &spec.new_relations {
        test.extend(entries_of(corpus, rel).into_iter().cloned());
    }
    let (test, gold) = seal(test);
    Ok(Split { train: Corpus::from_entries(Role::Train, train), test, gold })
}

/// Long-tail instance count for the new relation at position `id`:
/// `floor(base / (0.5 * id + 1))`, computed exactly as `floor(2 * base / (id + 2))`.
pub fn long_tail_target(base: usize, id: usize) -> usize {
    2 * base / (id + 2)
}

const FEWREL_PER_RELATION: usize = 700;

/// FewRel-LT: the known relations keep every instance, new relation `id`
/// (its position in `spec.new_relations`) keeps `long_tail_target(700, id)`
/// instances sampled without replacement.
pub fn build_fewrel_lt(corpus: &Corpus, spec: &SplitSpec, seed: u64) -> Result<Split, DataError> {
    let base = split_known_new(corpus, spec)?;
    let stream = SeedStream::new(seed);
    let mut test = Vec::new();
    // Mixed-test known-relation instances stay as they are.
    let new: HashSet<_> = spec.new_relations.iter().collect();
    for e in &base.test.entries {
        let rel = &base.gold[&e.instance.id];
        if !new.contains(rel) {
            test.push(Entry { instance: e.instance.clone(), relation: Some(rel.clone()) });
        }
    }
    for (id, rel) in spec.new_relations.iter().enumerate() {
        let entries = entries_of(corpus, rel);
        let required = long_tail_target(FEWREL_PER_RELATION, id);
        if entries.len() < required {
            return Err(DataError::InsufficientInstances { relation: rel.clone(), available: entries.len(), required });
        }
        let mut rng = stream.rng(&["fewrel-lt", rel.as_str()]);
        let chosen: HashSet<&str> =
            entries.choose_multiple(&mut rng, required).map(|e| e.instance.id.as_str()).collect();
        // Keep corpus order among the sampled instances.
        test.extend(entries.iter().filter(|e| chosen.contains(e.instance.id.as_str())).map(|e| (*e).clone()));
    }
    let (test, gold) = seal(test);
    Ok(Split { train: base.train, test, gold })
}
