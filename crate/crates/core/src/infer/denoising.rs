use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{ask, check_failure_rate, par_map, DiscoveryResult, InferError};
use crate::backend::{Generator, Phase, RequestTag};
use crate::domain::{CandidatePrediction, Corpus, Instance, PipelineConfig, RelationName, ReliableEntry, ReliableSet, Stage};
use crate::prompt::{parse_generated_relation, sample_denoise_batches, DemoPool, Templates};
use crate::seed::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchVerdict {
    pub relations: Vec<RelationName>,
    pub demo_ids: Vec<String>,
    pub output: Option<RelationName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One verification of one candidate in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCheck {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub attempt_k: u32,
    pub round: u32,
    pub candidate: RelationName,
    pub batches: Vec<BatchVerdict>,
    pub agreeing: usize,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u32,
    pub examined: Vec<String>,
    pub resolved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoisingResult {
    pub reliable: ReliableSet,
    /// Batches per candidate.
    pub d: usize,
    pub checks: Vec<CandidateCheck>,
    pub rounds: Vec<RoundSummary>,
    pub skipped: usize,
    pub requests: usize,
    pub failures: usize,
}

impl DenoisingResult {
    pub fn empty(d: usize) -> Self {
        Self { reliable: ReliableSet::default(), d, checks: Vec::new(), rounds: Vec::new(), skipped: 0, requests: 0, failures: 0 }
    }

    /// Reliable entries as denoising-stage prediction lines.
    pub fn candidates(&self) -> Vec<CandidatePrediction> {
        let mut lines: Vec<CandidatePrediction> = self
            .reliable
            .iter()
            .map(|(rel, e)| CandidatePrediction {
                instance_id: e.instance_id.clone(),
                stage: Stage::Denoising,
                relation: rel.clone(),
                attempt_k: e.attempt_k,
                round: e.round,
            })
            .collect();
        lines.sort_by(|a, b| (a.round, &a.instance_id).cmp(&(b.round, &b.instance_id)));
        lines
    }
}

/// Per-instance work of one round.
struct InstanceRound {
    checks: Vec<CandidateCheck>,
    requests: usize,
    failures: usize,
    skipped: usize,
}

/// Cross-checks every discovered candidate with the predictor over `t`
/// rounds; instances without a reliable relation are retried with fresh
/// demonstrations.
pub fn run_denoising(
    disc: &DiscoveryResult,
    test: &Corpus,
    cfg: &PipelineConfig,
    backend: &dyn Generator,
    templates: &Templates,
) -> Result<DenoisingResult, InferError> {
    cfg.validate()?;
    if disc.discovered.is_empty() {
        return Err(InferError::NothingDiscovered);
    }
    let d = cfg.d.resolve(disc.discovered.len(), cfg.n);
    let by_id: HashMap<&str, &Instance> = test.instances().map(|i| (i.id.as_str(), i)).collect();
    let seeds = SeedStream::new(cfg.seed);
    let mut result = DenoisingResult::empty(d);
    let mut resolved: HashSet<String> = HashSet::new();

    for round in 1..=cfg.t as u32 {
        let pending: Vec<_> = disc
            .instances
            .iter()
            .filter(|inst| !resolved.contains(&inst.instance_id) && !inst.distinct_candidates().is_empty())
            .collect();
        let pool = round_pool(disc, &result.reliable, &by_id);
        let outcomes = par_map(&pending, cfg.max_in_flight, |inst| -> Result<InstanceRound, InferError> {
            let mut out = InstanceRound { checks: Vec::new(), requests: 0, failures: 0, skipped: 0 };
            let id = inst.instance_id.as_str();
            let coverage: Vec<RelationName> =
                disc.discovered.iter().filter(|r| pool.has_material(r, Some(id))).cloned().collect();
            let dropped: Vec<&RelationName> = disc.discovered.iter().filter(|r| !coverage.contains(r)).collect();
            for (k, candidate) in inst.distinct_candidates() {
                let mut notes: Vec<String> =
                    dropped.iter().filter(|r| **r != candidate).map(|r| format!("no demonstration material for {r}")).collect();
                if !coverage.contains(candidate) {
                    notes.push(format!("candidate {candidate} has no demonstration material besides this instance; skipped"));
                    out.skipped += 1;
                    out.checks.push(CandidateCheck {
                        instance_id: id.to_string(),
                        attempt_k: k,
                        round,
                        candidate: candidate.clone(),
                        batches: Vec::new(),
                        agreeing: 0,
                        accepted: false,
                        notes,
                    });
                    continue;
                }
                let mut rng = seeds.rng(&["denoising", id, &k.to_string(), &round.to_string()]);
                let batches = sample_denoise_batches(candidate, &coverage, &pool, cfg.n, d, &mut rng, Some(id))?;
                let test_instance = by_id[id];
                let mut verdicts = Vec::with_capacity(batches.len());
                for (step, batch) in batches.iter().enumerate() {
                    let tag = RequestTag::new(id, Phase::Denoising, k).round(round).step(step as u32);
                    out.requests += 1;
                    let prompt = templates.render(batch, test_instance);
                    let (output, error) = match ask(backend, prompt, cfg.generation.denoising_temperature, cfg, tag) {
                        Ok(text) => match parse_generated_relation(&text) {
                            Ok(r) => (Some(r), None),
                            Err(e) => (None, Some(e.to_string())),
                        },
                        Err(e) => {
                            out.failures += 1;
                            (None, Some(e.to_string()))
                        }
                    };
                    verdicts.push(BatchVerdict {
                        relations: batch.candidate_relations().into_iter().cloned().collect(),
                        demo_ids: batch.demos.iter().map(|d| d.instance.id.clone()).collect(),
                        output,
                        error,
                    });
                }
                let agreeing = verdicts.iter().filter(|v| v.output.as_ref() == Some(candidate)).count();
                out.checks.push(CandidateCheck {
                    instance_id: id.to_string(),
                    attempt_k: k,
                    round,
                    candidate: candidate.clone(),
                    accepted: cfg.consistency.accepts(agreeing, verdicts.len()),
                    agreeing,
                    batches: verdicts,
                    notes,
                });
            }
            Ok(out)
        });

        let mut summary = RoundSummary { round, examined: Vec::new(), resolved: Vec::new() };
        for (inst, outcome) in pending.iter().zip(outcomes) {
            let outcome: InstanceRound = outcome?;
            result.requests += outcome.requests;
            result.failures += outcome.failures;
            result.skipped += outcome.skipped;
            summary.examined.push(inst.instance_id.clone());
            // Most agreeing verdicts first, then the earliest attempt.
            let winner = outcome
                .checks
                .iter()
                .filter(|c| c.accepted)
                .min_by_key(|c| (std::cmp::Reverse(c.agreeing), c.attempt_k));
            if let Some(w) = winner {
                result.reliable.insert(
                    w.candidate.clone(),
                    ReliableEntry {
                        instance_id: w.instance_id.clone(),
                        attempt_k: w.attempt_k,
                        round,
                        verdicts: w.batches.iter().map(|b| b.output.as_ref().map_or_else(String::new, |r| r.to_string())).collect(),
                    },
                );
                resolved.insert(inst.instance_id.clone());
                summary.resolved.push(inst.instance_id.clone());
            }
            result.checks.extend(outcome.checks);
        }
        result.rounds.push(summary);
    }
    check_failure_rate(Stage::Denoising, result.failures, result.requests)?;
    Ok(result)
}

/// Demonstration material per discovered relation: reliable instances first,
/// then every instance whose discovery attempts produced the relation.
fn round_pool(disc: &DiscoveryResult, reliable: &ReliableSet, by_id: &HashMap<&str, &Instance>) -> DemoPool {
    let mut pool = DemoPool::new();
    for rel in &disc.discovered {
        if let Some(entries) = reliable.by_relation.get(rel) {
            for e in entries {
                pool.push(rel.clone(), 0, by_id[e.instance_id.as_str()].clone());
            }
        }
        for (id, _) in disc.supporters(rel) {
            pool.push(rel.clone(), 1, by_id[id].clone());
        }
    }
    pool
}
