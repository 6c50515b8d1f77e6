use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{ask, check_failure_rate, par_map, DiscoveryResult, InferError};
use crate::backend::{Generator, Phase, RequestTag};
use crate::domain::{CandidatePrediction, Corpus, Instance, PipelineConfig, RelationName, ReliableSet, Stage};
use crate::eval::PredictionMap;
use crate::prompt::{parse_generated_relation, sample_set_demos, DemoPool, Templates};
use crate::seed::SeedStream;

/// How a tournament round picked its winner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Answered,
    /// The first answer was outside the set; the re-ask was inside.
    Reasked,
    /// Both answers were outside the set; the previous winner stays.
    RetainedPrevious,
    /// Both answers were outside the first set; its first relation wins.
    FirstCandidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentRound {
    pub round: u32,
    pub candidates: Vec<RelationName>,
    pub demo_ids: Vec<String>,
    /// Raw outputs, re-ask included; errors are recorded as `error: ...`.
    pub outputs: Vec<String>,
    pub winner: RelationName,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalPrediction {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub relation: RelationName,
    /// Relation carried over from denoising and placed in the first set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeded_with: Option<RelationName>,
    /// Relations left out because no demonstration other than this instance
    /// exists for them.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub skipped_relations: Vec<RelationName>,
    pub rounds: Vec<TournamentRound>,
}

impl FinalPrediction {
    /// 1-based round in which the final relation first won.
    pub fn decided_in(&self) -> u32 {
        self.rounds.iter().find(|r| r.winner == self.relation).map_or(0, |r| r.round)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub predictions: Vec<FinalPrediction>,
    /// Relations without reliable instances, served from discovery supporters.
    pub fallback_relations: Vec<RelationName>,
    pub requests: usize,
    pub failures: usize,
}

impl PredictionResult {
    pub fn lines(&self) -> Vec<CandidatePrediction> {
        self.predictions
            .iter()
            .map(|p| CandidatePrediction {
                instance_id: p.instance_id.clone(),
                stage: Stage::Prediction,
                relation: p.relation.clone(),
                attempt_k: 1,
                round: p.decided_in(),
            })
            .collect()
    }

    pub fn answers(&self) -> PredictionMap {
        self.predictions.iter().map(|p| (p.instance_id.clone(), p.relation.clone())).collect()
    }
}

/// Demo pool for the tournament: reliable instances, then the
/// highest-voting discovery supporters, then the remaining supporters.
fn tournament_pool(
    disc: &DiscoveryResult,
    reliable: &ReliableSet,
    by_id: &HashMap<&str, &Instance>,
) -> (DemoPool, Vec<RelationName>) {
    let mut pool = DemoPool::new();
    let mut fallback = Vec::new();
    for rel in &disc.discovered {
        match reliable.by_relation.get(rel) {
            Some(entries) if !entries.is_empty() => {
                for e in entries {
                    pool.push(rel.clone(), 0, by_id[e.instance_id.as_str()].clone());
                }
            }
            _ => fallback.push(rel.clone()),
        }
        let supporters: Vec<(&str, usize)> = disc.supporters(rel).collect();
        let top = supporters.iter().map(|(_, v)| *v).max().unwrap_or(0);
        for (id, votes) in supporters {
            pool.push(rel.clone(), if votes == top { 1 } else { 2 }, by_id[id].clone());
        }
    }
    (pool, fallback)
}

struct InstanceOutcome {
    prediction: FinalPrediction,
    requests: usize,
    failures: usize,
}

/// Re-predicts every test instance by a knockout over all discovered
/// relations, `n` at a time.
pub fn run_prediction(
    test: &Corpus,
    reliable: &ReliableSet,
    disc: &DiscoveryResult,
    cfg: &PipelineConfig,
    backend: &dyn Generator,
    templates: &Templates,
) -> Result<PredictionResult, InferError> {
    cfg.validate()?;
    if disc.discovered.is_empty() {
        return Err(InferError::NothingDiscovered);
    }
    let by_id: HashMap<&str, &Instance> = test.instances().map(|i| (i.id.as_str(), i)).collect();
    let (pool, fallback_relations) = tournament_pool(disc, reliable, &by_id);
    let seeds = SeedStream::new(cfg.seed);
    let instances: Vec<&Instance> = test.instances().collect();

    let outcomes = par_map(&instances, cfg.max_in_flight, |inst| {
        tournament(inst, &disc.discovered, reliable.relation_of(&inst.id), &pool, &seeds, cfg, backend, templates)
    });
    let mut result = PredictionResult { predictions: Vec::new(), fallback_relations, requests: 0, failures: 0 };
    for outcome in outcomes {
        let outcome = outcome?;
        result.requests += outcome.requests;
        result.failures += outcome.failures;
        result.predictions.push(outcome.prediction);
    }
    check_failure_rate(Stage::Prediction, result.failures, result.requests)?;
    Ok(result)
}

#[allow(clippy::too_many_arguments)]
fn tournament(
    inst: &Instance,
    discovered: &[RelationName],
    seeded_with: Option<&RelationName>,
    pool: &DemoPool,
    seeds: &SeedStream,
    cfg: &PipelineConfig,
    backend: &dyn Generator,
    templates: &Templates,
) -> Result<InstanceOutcome, InferError> {
    let id = inst.id.as_str();
    let mut rng = seeds.rng(&["prediction", id]);
    let (mut order, skipped): (Vec<&RelationName>, Vec<&RelationName>) =
        discovered.iter().partition(|r| pool.has_material(r, Some(id)));
    order.shuffle(&mut rng);
    let seeded_with = seeded_with.filter(|r| order.contains(r));
    if let Some(first) = seeded_with {
        let at = order.iter().position(|r| *r == first).expect("seed relation is in the order");
        let r = order.remove(at);
        order.insert(0, r);
    }
    if order.is_empty() {
        return Err(InferError::NothingDiscovered);
    }

    let mut outcome = InstanceOutcome {
        prediction: FinalPrediction {
            instance_id: inst.id.clone(),
            relation: order[0].clone(),
            seeded_with: seeded_with.cloned(),
            skipped_relations: skipped.into_iter().cloned().collect(),
            rounds: Vec::new(),
        },
        requests: 0,
        failures: 0,
    };
    let mut next = cfg.n.min(order.len());
    let mut set: Vec<&RelationName> = order[..next].to_vec();
    let mut winner: Option<&RelationName> = None;
    let mut round = 1u32;
    loop {
        let demos = sample_set_demos(pool, &set, &mut rng, Some(id))?;
        let prompt = templates.render(&demos, inst);
        let mut outputs = Vec::new();
        let mut pick = None;
        for retry in 0..2u32 {
            let tag = RequestTag::new(id, Phase::Prediction, 1).step(round).retry(retry);
            outcome.requests += 1;
            match ask(backend, prompt.clone(), cfg.generation.prediction_temperature, cfg, tag) {
                Ok(text) => {
                    let parsed = parse_generated_relation(&text).ok();
                    outputs.push(text);
                    if let Some(r) = parsed.and_then(|p| set.iter().copied().find(|s| **s == p)) {
                        pick = Some((r, retry));
                        break;
                    }
                }
                Err(e) => {
                    outcome.failures += 1;
                    outputs.push(format!("error: {e}"));
                }
            }
        }
        let (won, resolution) = match (pick, winner) {
            (Some((r, 0)), _) => (r, Resolution::Answered),
            (Some((r, _)), _) => (r, Resolution::Reasked),
            (None, Some(prev)) => (prev, Resolution::RetainedPrevious),
            (None, None) => (set[0], Resolution::FirstCandidate),
        };
        outcome.prediction.rounds.push(TournamentRound {
            round,
            candidates: demos.candidate_relations().into_iter().cloned().collect(),
            demo_ids: demos.demos.iter().map(|d| d.instance.id.clone()).collect(),
            outputs,
            winner: won.clone(),
            resolution,
        });
        winner = Some(won);
        if next >= order.len() {
            break;
        }
        let take = (cfg.n - 1).min(order.len() - next);
        set = std::iter::once(won).chain(order[next..next + take].iter().copied()).collect();
        next += take;
        round += 1;
    }
    outcome.prediction.relation = winner.expect("at least one round ran").clone();
    Ok(outcome)
}

/// Tournament rounds needed for `relations` candidates at set size `n`.
pub fn tournament_rounds(relations: usize, n: usize) -> usize {
    if relations <= n {
        1
    } else {
        1 + (relations - n).div_ceil(n - 1)
    }
}
