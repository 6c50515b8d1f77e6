//! A deterministic stand-in for the fine-tuned model pair.
//!
//! The simulator reads the candidate relations announced in a rendered prompt
//! and the instance id from the request tag. When the gold relation is among
//! the candidates it answers gold with probability `p_hit_target_in_demos`,
//! otherwise with `p_hit_otherwise`; misses draw from the confusion model.
//! All randomness is a pure function of the seed and the request tag.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, GenerationRequest, Generator};
use crate::domain::{GoldMap, RelationName};
use crate::prompt::{PromptTemplate, Templates};
use crate::seed::SeedStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Confusion {
    /// Uniform over the announced non-gold candidates; falls back to a novel
    /// name when there are none.
    Listed,
    /// A synthetic name `novel relation {j}` with `j` uniform in `0..pool`.
    Novel { pool: u32 },
}

/// Which tag fields feed the hit/miss draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawScope {
    /// Instance, phase, attempt and round: the same call site answers
    /// consistently across its batches, tournament steps and re-asks, as a
    /// greedily decoded model does for one instance.
    #[default]
    Attempt,
    /// Every tag field, so each request draws independently.
    Request,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedOracleConfig {
    #[serde(skip)]
    pub gold: GoldMap,
    pub p_hit_target_in_demos: f64,
    pub p_hit_otherwise: f64,
    pub confusion: Confusion,
    #[serde(default)]
    pub draw_scope: DrawScope,
    pub seed: u64,
}

impl SimulatedOracleConfig {
    pub fn new(gold: GoldMap, p_hit_target_in_demos: f64, p_hit_otherwise: f64, seed: u64) -> Self {
        Self { gold, p_hit_target_in_demos, p_hit_otherwise, confusion: Confusion::Listed, draw_scope: DrawScope::Attempt, seed }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        for (name, p) in [("p_hit_target_in_demos", self.p_hit_target_in_demos), ("p_hit_otherwise", self.p_hit_otherwise)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(BackendError::Config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        if let Confusion::Novel { pool: 0 } = self.confusion {
            return Err(BackendError::Config("novel confusion pool must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    cfg: SimulatedOracleConfig,
    prefixes: Vec<String>,
}

impl SimulatedOracle {
    pub fn new(cfg: SimulatedOracleConfig) -> Result<Self, BackendError> {
        Self::with_templates(cfg, &Templates::default())
    }

    pub fn with_templates(cfg: SimulatedOracleConfig, templates: &Templates) -> Result<Self, BackendError> {
        cfg.validate()?;
        let prefixes = [&templates.rd, &templates.rp]
            .into_iter()
            .map(PromptTemplate::constraint_prefix)
            .map(str::to_string)
            .collect();
        Ok(Self { cfg, prefixes })
    }

    pub fn config(&self) -> &SimulatedOracleConfig {
        &self.cfg
    }

    fn candidates(&self, prompt: &str) -> Vec<RelationName> {
        let Some(list) = prompt
            .lines()
            .find_map(|line| self.prefixes.iter().find_map(|p| line.strip_prefix(p.as_str())))
        else {
            return Vec::new();
        };
        list.strip_suffix('.')
            .unwrap_or(list)
            .split(", ")
            .filter_map(|s| RelationName::new(s).ok())
            .collect()
    }
}

/// One simulated completion; see the module docs for the answer model.
pub fn simulate_generate(oracle: &SimulatedOracle, request: &GenerationRequest) -> Result<String, BackendError> {
    let cfg = &oracle.cfg;
    let tag = &request.tag;
    let gold = cfg
        .gold
        .get(&tag.instance_id)
        .ok_or_else(|| BackendError::Oracle(format!("unknown instance id {}", tag.instance_id)))?;
    let candidates = oracle.candidates(&request.prompt);
    let listed = candidates.contains(gold);

    let stream = SeedStream::new(cfg.seed);
    let (attempt, round, step, retry) =
        (tag.attempt.to_string(), tag.round.to_string(), tag.step.to_string(), tag.retry.to_string());
    let phase = tag.phase.to_string();
    let hit_draw = match cfg.draw_scope {
        DrawScope::Attempt => stream.unit(&["hit", &tag.instance_id, &phase, &attempt, &round]),
        DrawScope::Request => stream.unit(&["hit", &tag.instance_id, &phase, &attempt, &round, &step, &retry]),
    };
    let p = if listed { cfg.p_hit_target_in_demos } else { cfg.p_hit_otherwise };
    if hit_draw < p {
        return Ok(gold.to_string());
    }

    let confusion_draw = stream.unit(&["confusion", &tag.instance_id, &phase, &attempt, &round, &step, &retry]);
    let distractors: Vec<&RelationName> = candidates.iter().filter(|c| *c != gold).collect();
    match cfg.confusion {
        Confusion::Listed if !distractors.is_empty() => {
            let i = ((confusion_draw * distractors.len() as f64) as usize).min(distractors.len() - 1);
            Ok(distractors[i].to_string())
        }
        Confusion::Listed => Ok(novel_name(confusion_draw, 16, gold)),
        Confusion::Novel { pool } => Ok(novel_name(confusion_draw, pool, gold)),
    }
}

fn novel_name(draw: f64, pool: u32, gold: &RelationName) -> String {
    let j = ((draw * pool as f64) as u32).min(pool - 1);
    let name = format!("novel relation {j}");
    if name == gold.as_str() {
        format!("novel relation {j} alt")
    } else {
        name
    }
}

impl Generator for SimulatedOracle {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        simulate_generate(self, request)
    }

    fn describe(&self) -> serde_json::Value {
        let mut hasher = Sha256::new();
        for (id, rel) in &self.cfg.gold {
            hasher.update(id.as_bytes());
            hasher.update([0]);
            hasher.update(rel.as_str().as_bytes());
            hasher.update([1]);
        }
        let digest: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        serde_json::json!({
            "kind": "simulator",
            "config": self.cfg,
            "gold_instances": self.cfg.gold.len(),
            "gold_sha256": digest,
        })
    }
}
