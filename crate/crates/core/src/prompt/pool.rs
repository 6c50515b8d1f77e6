use indexmap::IndexMap;
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::domain::{Corpus, Instance, LabeledInstance, RelationName};

/// Demonstration material per relation, split into preference tiers.
///
/// A pick draws uniformly from the first tier that holds an instance other
/// than the one being queried, so a prompt never shows the test instance as
/// its own demonstration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DemoPool {
    tiers: IndexMap<RelationName, Vec<Vec<Instance>>>,
}

impl DemoPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// One tier per relation holding every labeled instance, in corpus order.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut pool = Self::new();
        for item in corpus.labeled_instances() {
            pool.push(item.relation, 0, item.instance);
        }
        pool
    }

    /// Adds an instance to `tier` of `relation`, creating empty tiers as needed.
    pub fn push(&mut self, relation: RelationName, tier: usize, instance: Instance) {
        let tiers = self.tiers.entry(relation).or_default();
        if tiers.len() <= tier {
            tiers.resize_with(tier + 1, Vec::new);
        }
        tiers[tier].push(instance);
    }

    pub fn relations(&self) -> impl Iterator<Item = &RelationName> {
        self.tiers.keys()
    }

    pub fn relation_count(&self) -> usize {
        self.tiers.len()
    }

    pub fn contains(&self, relation: &RelationName) -> bool {
        self.tiers.contains_key(relation)
    }

    pub fn has_material(&self, relation: &RelationName, avoid: Option<&str>) -> bool {
        self.tiers
            .get(relation)
            .is_some_and(|tiers| tiers.iter().flatten().any(|i| Some(i.id.as_str()) != avoid))
    }

    /// Relations with at least one instance other than `avoid`, in pool order.
    pub fn usable_relations(&self, avoid: Option<&str>) -> Vec<&RelationName> {
        self.relations().filter(|r| self.has_material(r, avoid)).collect()
    }

    pub fn pick<R: Rng + ?Sized>(&self, relation: &RelationName, rng: &mut R, avoid: Option<&str>) -> Option<LabeledInstance> {
        for tier in self.tiers.get(relation)? {
            let usable: Vec<&Instance> = tier.iter().filter(|i| Some(i.id.as_str()) != avoid).collect();
            if let Some(chosen) = usable.choose(rng) {
                return Some(LabeledInstance::new((*chosen).clone(), relation.clone()));
            }
        }
        None
    }
}
