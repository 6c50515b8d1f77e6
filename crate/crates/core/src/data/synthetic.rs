use crate::domain::{Corpus, Instance, LabeledInstance, RelationName, Role};

/// A labeled corpus of `relations x per_relation` templated sentences.
/// Relations are named `"{prefix} {r}"`, ids `"{id_prefix}-{r}-{i}"`.
pub fn synthetic_corpus(prefix: &str, relations: usize, per_relation: usize, id_prefix: &str) -> Corpus {
    let mut items = Vec::with_capacity(relations * per_relation);
    for r in 0..relations {
        let relation = RelationName::new(&format!("{prefix} {r}")).expect("non-empty prefix");
        for i in 0..per_relation {
            let head = format!("entity {id_prefix}{r}a{i}");
            let tail = format!("entity {id_prefix}{r}b{i}");
            let text = format!("In sentence {i}, {head} stands in relation {r} to {tail}.");
            items.push(LabeledInstance::new(Instance::new(format!("{id_prefix}-{r}-{i}"), text, head, tail), relation.clone()));
        }
    }
    Corpus::labeled(Role::Train, items)
}
