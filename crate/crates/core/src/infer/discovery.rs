use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ask, check_failure_rate, par_map, InferError};
use crate::backend::{Generator, Phase, RequestTag};
use crate::domain::{CandidatePrediction, Corpus, Instance, PipelineConfig, RelationName, Stage};
use crate::eval::PredictionMap;
use crate::prompt::{parse_generated_relation, sample_rd_demos, DemoPool, Templates};
use crate::seed::SeedStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryAttempt {
    pub attempt_k: u32,
    /// `None` is an abstention.
    pub relation: Option<RelationName>,
    pub demo_ids: Vec<String>,
    pub demo_relations: Vec<RelationName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The backend gave up on this attempt.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDiscovery {
    #[serde(rename = "id")]
    pub instance_id: String,
    pub attempts: Vec<DiscoveryAttempt>,
}

impl InstanceDiscovery {
    /// Distinct answered relations with the earliest attempt that produced each.
    pub fn distinct_candidates(&self) -> Vec<(u32, &RelationName)> {
        let mut out: Vec<(u32, &RelationName)> = Vec::new();
        for a in &self.attempts {
            if let Some(r) = &a.relation {
                if !out.iter().any(|(_, seen)| *seen == r) {
                    out.push((a.attempt_k, r));
                }
            }
        }
        out
    }

    /// Attempts that answered `relation`.
    pub fn votes_for(&self, relation: &RelationName) -> usize {
        self.attempts.iter().filter(|a| a.relation.as_ref() == Some(relation)).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub k: usize,
    pub instances: Vec<InstanceDiscovery>,
    /// Union of answered relations, by first appearance.
    pub discovered: Vec<RelationName>,
    /// Instances whose attempts include each relation.
    pub support: IndexMap<RelationName, usize>,
    pub abstentions: usize,
    pub failures: usize,
}

impl DiscoveryResult {
    fn from_instances(k: usize, instances: Vec<InstanceDiscovery>) -> Self {
        let mut support: IndexMap<RelationName, usize> = IndexMap::new();
        let mut abstentions = 0;
        let mut failures = 0;
        for inst in &instances {
            for a in &inst.attempts {
                abstentions += a.relation.is_none() as usize;
                failures += a.failed as usize;
            }
            for (_, r) in inst.distinct_candidates() {
                *support.entry(r.clone()).or_default() += 1;
            }
        }
        let discovered = support.keys().cloned().collect();
        Self { k, instances, discovered, support, abstentions, failures }
    }

    pub fn attempts_total(&self) -> usize {
        self.instances.iter().map(|i| i.attempts.len()).sum()
    }

    /// Every answered attempt as a discovery-stage prediction line.
    pub fn candidates(&self) -> Vec<CandidatePrediction> {
        self.instances
            .iter()
            .flat_map(|inst| {
                inst.attempts.iter().filter_map(move |a| {
                    a.relation.as_ref().map(|r| CandidatePrediction {
                        instance_id: inst.instance_id.clone(),
                        stage: Stage::Discovery,
                        relation: r.clone(),
                        attempt_k: a.attempt_k,
                        round: 0,
                    })
                })
            })
            .collect()
    }

    /// Answered relations per instance, in attempt order.
    pub fn attempt_map(&self) -> IndexMap<String, Vec<RelationName>> {
        self.instances
            .iter()
            .map(|inst| (inst.instance_id.clone(), inst.attempts.iter().filter_map(|a| a.relation.clone()).collect()))
            .collect()
    }

    /// The earliest answered attempt of each instance.
    pub fn first_answers(&self) -> PredictionMap {
        self.instances
            .iter()
            .filter_map(|inst| inst.attempts.iter().find_map(|a| a.relation.clone()).map(|r| (inst.instance_id.clone(), r)))
            .collect()
    }

    /// Instances supporting `relation`, with their vote counts.
    pub fn supporters<'a>(&'a self, relation: &'a RelationName) -> impl Iterator<Item = (&'a str, usize)> + 'a {
        self.instances.iter().filter_map(move |inst| match inst.votes_for(relation) {
            0 => None,
            v => Some((inst.instance_id.as_str(), v)),
        })
    }
}

/// `k` discoverer attempts per test instance, each with freshly sampled
/// known-relation demonstrations.
pub fn run_discovery(
    test: &Corpus,
    train: &Corpus,
    cfg: &PipelineConfig,
    backend: &dyn Generator,
    templates: &Templates,
) -> Result<DiscoveryResult, InferError> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(InferError::EmptyTest);
    }
    if !train.is_labeled() {
        return Err(InferError::UnlabeledTrain);
    }
    let pool = DemoPool::from_corpus(train);
    let seeds = SeedStream::new(cfg.seed);
    let instances: Vec<&Instance> = test.instances().collect();

    let results = par_map(&instances, cfg.max_in_flight, |inst| {
        let attempts = (1..=cfg.k as u32)
            .map(|k| attempt(inst, k, &pool, &seeds, cfg, backend, templates))
            .collect::<Result<Vec<_>, InferError>>()?;
        Ok(InstanceDiscovery { instance_id: inst.id.clone(), attempts })
    });
    let instances = results.into_iter().collect::<Result<Vec<_>, InferError>>()?;
    let result = DiscoveryResult::from_instances(cfg.k, instances);
    check_failure_rate(Stage::Discovery, result.failures, result.attempts_total())?;
    if result.discovered.is_empty() {
        return Err(InferError::NothingDiscovered);
    }
    Ok(result)
}

fn attempt(
    inst: &Instance,
    k: u32,
    pool: &DemoPool,
    seeds: &SeedStream,
    cfg: &PipelineConfig,
    backend: &dyn Generator,
    templates: &Templates,
) -> Result<DiscoveryAttempt, InferError> {
    let mut rng = seeds.rng(&["discovery", &inst.id, &k.to_string()]);
    let demos = sample_rd_demos(pool, cfg.n, &mut rng, None, Some(&inst.id))?;
    let prompt = templates.render(&demos, inst);
    let tag = RequestTag::new(inst.id.clone(), Phase::Discovery, k);
    let mut out = DiscoveryAttempt {
        attempt_k: k,
        relation: None,
        demo_ids: demos.demos.iter().map(|d| d.instance.id.clone()).collect(),
        demo_relations: demos.demos.iter().map(|d| d.relation.clone()).collect(),
        raw: None,
        error: None,
        failed: false,
    };
    match ask(backend, prompt, cfg.generation.discovery_temperature, cfg, tag) {
        Ok(text) => {
            match parse_generated_relation(&text) {
                Ok(r) => out.relation = Some(r),
                Err(e) => out.error = Some(e.to_string()),
            }
            out.raw = Some(text);
        }
        Err(e) => {
            out.error = Some(e.to_string());
            out.failed = true;
        }
    }
    Ok(out)
}
