use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::{DemoMode, DemoPool, DemoSet, PromptError};
use crate::domain::{LabeledInstance, RelationName};

fn sampling(msg: impl Into<String>) -> PromptError {
    PromptError::Sampling(msg.into())
}

fn materialize<R: Rng + ?Sized>(
    pool: &DemoPool,
    relations: &[&RelationName],
    rng: &mut R,
    avoid: Option<&str>,
) -> Result<Vec<LabeledInstance>, PromptError> {
    relations
        .iter()
        .map(|r| pool.pick(r, rng, avoid).ok_or_else(|| sampling(format!("no demonstration material for {r}"))))
        .collect()
}

/// RD demonstrations: `n` distinct relations (never `exclude`), one uniformly
/// drawn instance each, in random order.
pub fn sample_rd_demos<R: Rng + ?Sized>(
    pool: &DemoPool,
    n: usize,
    rng: &mut R,
    exclude: Option<&RelationName>,
    avoid: Option<&str>,
) -> Result<DemoSet, PromptError> {
    let eligible: Vec<&RelationName> =
        pool.usable_relations(avoid).into_iter().filter(|r| Some(*r) != exclude).collect();
    if eligible.len() < n {
        return Err(sampling(format!("need {n} relations, pool offers {}", eligible.len())));
    }
    let mut chosen: Vec<&RelationName> = eligible.choose_multiple(rng, n).copied().collect();
    chosen.shuffle(rng);
    Ok(DemoSet { mode: DemoMode::Rd, demos: materialize(pool, &chosen, rng, avoid)?, target: None })
}

/// RP demonstrations: one instance of `target` plus one each of `n - 1` other
/// distinct relations, in random order.
pub fn sample_rp_demos<R: Rng + ?Sized>(
    pool: &DemoPool,
    target: &RelationName,
    n: usize,
    rng: &mut R,
    avoid: Option<&str>,
) -> Result<DemoSet, PromptError> {
    if n == 0 {
        return Err(sampling("n must be positive"));
    }
    if !pool.has_material(target, avoid) {
        return Err(sampling(format!("target relation {target} is not in the pool")));
    }
    let others: Vec<&RelationName> =
        pool.usable_relations(avoid).into_iter().filter(|r| *r != target).collect();
    if others.len() < n - 1 {
        return Err(sampling(format!("need {} other relations, pool offers {}", n - 1, others.len())));
    }
    let mut chosen: Vec<&RelationName> = others.choose_multiple(rng, n - 1).copied().collect();
    chosen.push(target);
    chosen.shuffle(rng);
    Ok(DemoSet { mode: DemoMode::Rp, demos: materialize(pool, &chosen, rng, avoid)?, target: Some(target.clone()) })
}

/// RP demonstrations for exactly `relations`, one instance each, in random
/// order.
pub fn sample_set_demos<R: Rng + ?Sized>(
    pool: &DemoPool,
    relations: &[&RelationName],
    rng: &mut R,
    avoid: Option<&str>,
) -> Result<DemoSet, PromptError> {
    let mut order = relations.to_vec();
    order.shuffle(rng);
    Ok(DemoSet { mode: DemoMode::Rp, demos: materialize(pool, &order, rng, avoid)?, target: None })
}

/// `d` RP demonstration sets for verifying `candidate`. Each holds the
/// candidate plus up to `n - 1` other discovered relations, and together they
/// cover every discovered relation. Sets beyond the minimum needed for
/// coverage are filled with random other relations.
pub fn sample_denoise_batches<R: Rng + ?Sized>(
    candidate: &RelationName,
    discovered: &[RelationName],
    pool: &DemoPool,
    n: usize,
    d: usize,
    rng: &mut R,
    avoid: Option<&str>,
) -> Result<Vec<DemoSet>, PromptError> {
    if n < 2 {
        return Err(sampling("n must be at least 2 to cover other relations"));
    }
    if !discovered.contains(candidate) {
        return Err(sampling(format!("candidate {candidate} is not a discovered relation")));
    }
    if let Some(r) = discovered.iter().find(|r| !pool.has_material(r, avoid)) {
        return Err(sampling(format!("no demonstration material for {r}")));
    }
    let mut seen = HashSet::new();
    let mut others: Vec<&RelationName> =
        discovered.iter().filter(|r| *r != candidate && seen.insert(*r)).collect();
    let per_batch = n - 1;
    let required = others.len().div_ceil(per_batch).max(1);
    if d < required {
        return Err(sampling(format!("{d} batches cannot cover {} relations at n = {n}", others.len() + 1)));
    }
    others.shuffle(rng);

    let mut groups: Vec<Vec<&RelationName>> = others.chunks(per_batch).map(<[_]>::to_vec).collect();
    if groups.is_empty() {
        groups.push(Vec::new());
    }
    while groups.len() < d {
        groups.push(Vec::new());
    }
    for group in &mut groups {
        if group.len() < per_batch {
            let spare: Vec<&RelationName> = others.iter().copied().filter(|r| !group.contains(r)).collect();
            let need = (per_batch - group.len()).min(spare.len());
            group.extend(spare.choose_multiple(rng, need).copied());
        }
    }

    groups
        .into_iter()
        .map(|mut group| {
            group.push(candidate);
            group.shuffle(rng);
            Ok(DemoSet {
                mode: DemoMode::Rp,
                demos: materialize(pool, &group, rng, avoid)?,
                target: Some(candidate.clone()),
            })
        })
        .collect()
}
