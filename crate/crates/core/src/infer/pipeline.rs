use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::output::write_json;
use super::{
    run_denoising, run_discovery, run_prediction, write_jsonl, DenoisingResult, DiscoveryResult, InferError, PredictionResult,
    Resolution,
};
use crate::backend::Generator;
use crate::domain::{CandidatePrediction, Corpus, GoldMap, PipelineConfig, RelationName, ReliableSet, Stage};
use crate::eval::{evaluate, AlignmentError, EvalReport, PredictionMap};
use crate::prompt::Templates;

pub const MANIFEST_FORMAT: &str = "orex-run-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Stand-in label for instances that never received an answer.
pub const UNANSWERED: &str = "unanswered";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDigest {
    pub instances: usize,
    pub labeled: bool,
    pub sha256: String,
}

impl CorpusDigest {
    pub fn of(corpus: &Corpus) -> Self {
        let mut hasher = Sha256::new();
        for entry in &corpus.entries {
            let line = serde_json::to_string(entry).expect("entries serialize");
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        Self {
            instances: corpus.len(),
            labeled: corpus.is_labeled(),
            sha256: hasher.finalize().iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: Option<Stage>,
    pub requests: usize,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstentions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discovered_relations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batches_per_candidate: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reliable_entries: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved_per_round: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped_candidates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolutions: Option<IndexMap<String, usize>>,
}

/// Everything needed to reproduce a run. Holds no timestamps so that
/// identical runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: PipelineConfig,
    pub seed: u64,
    pub templates: IndexMap<String, String>,
    pub backend: serde_json::Value,
    pub corpora: IndexMap<String, CorpusDigest>,
    pub stages: Vec<StageStats>,
    /// Relations whose tournament demonstrations came from discovery
    /// supporters because none was found reliable.
    pub fallback_relations: Vec<RelationName>,
}

impl Manifest {
    fn new(cfg: &PipelineConfig, backend: &dyn Generator, templates: &Templates, test: &Corpus, train: &Corpus) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            status: RunStatus::Complete,
            error: None,
            config: cfg.clone(),
            seed: cfg.seed,
            templates: [("rd".to_string(), templates.rd.version.clone()), ("rp".to_string(), templates.rp.version.clone())]
                .into_iter()
                .collect(),
            backend: backend.describe(),
            corpora: [("test".to_string(), CorpusDigest::of(test)), ("train".to_string(), CorpusDigest::of(train))]
                .into_iter()
                .collect(),
            stages: Vec::new(),
            fallback_relations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub test_ids: Vec<String>,
    pub discovery: DiscoveryResult,
    pub denoising: Option<DenoisingResult>,
    pub prediction: Option<PredictionResult>,
    pub manifest: Manifest,
}

impl PipelineOutput {
    /// The last stage's answer per instance. After denoising alone, an
    /// instance without a reliable relation keeps its first discovery answer.
    pub fn final_lines(&self) -> Vec<CandidatePrediction> {
        if let Some(p) = &self.prediction {
            return p.lines();
        }
        let discovery: IndexMap<&str, CandidatePrediction> = self
            .discovery
            .instances
            .iter()
            .filter_map(|inst| {
                inst.attempts.iter().find(|a| a.relation.is_some()).map(|a| {
                    let line = CandidatePrediction {
                        instance_id: inst.instance_id.clone(),
                        stage: Stage::Discovery,
                        relation: a.relation.clone().expect("filtered to answered attempts"),
                        attempt_k: a.attempt_k,
                        round: 0,
                    };
                    (inst.instance_id.as_str(), line)
                })
            })
            .collect();
        let reliable: IndexMap<String, CandidatePrediction> = self
            .denoising
            .iter()
            .flat_map(DenoisingResult::candidates)
            .map(|c| (c.instance_id.clone(), c))
            .collect();
        self.test_ids
            .iter()
            .filter_map(|id| reliable.get(id).or_else(|| discovery.get(id.as_str())).cloned())
            .collect()
    }

    pub fn final_answers(&self) -> PredictionMap {
        self.final_lines().into_iter().map(|c| (c.instance_id, c.relation)).collect()
    }

    pub fn reliable(&self) -> Option<&ReliableSet> {
        self.denoising.as_ref().map(|d| &d.reliable)
    }

    /// Scores the final answers; unanswered instances share one stand-in
    /// label. Pass@K comes from the discovery attempts.
    pub fn evaluate(&self, gold: &GoldMap) -> Result<EvalReport, AlignmentError> {
        let mut answers = self.final_answers();
        let stand_in = RelationName::new(UNANSWERED).expect("constant is a valid name");
        for id in gold.keys() {
            if !answers.contains_key(id) {
                answers.insert(id.clone(), stand_in.clone());
            }
        }
        let ordered: PredictionMap = gold.keys().filter_map(|id| answers.get(id).map(|r| (id.clone(), r.clone()))).collect();
        let attempts = self.discovery.attempt_map();
        evaluate(&ordered, gold, Some((&attempts, self.discovery.k as u32)))
    }

    /// Writes predictions, per-stage traces and the manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), InferError> {
        std::fs::create_dir_all(dir).map_err(|source| InferError::Io { path: dir.to_path_buf(), source })?;
        write_jsonl(&dir.join("predictions.jsonl"), self.final_lines())?;
        write_jsonl(&dir.join("discovery.jsonl"), self.discovery.candidates())?;
        write_jsonl(&dir.join("trace_discovery.jsonl"), &self.discovery.instances)?;
        if let Some(d) = &self.denoising {
            write_jsonl(&dir.join("reliable.jsonl"), d.candidates())?;
            write_jsonl(&dir.join("trace_denoising.jsonl"), &d.checks)?;
        }
        if let Some(p) = &self.prediction {
            write_jsonl(&dir.join("trace_prediction.jsonl"), &p.predictions)?;
        }
        write_json(&dir.join("manifest.json"), &self.manifest)
    }
}

/// Runs the stages up to `cfg.stop_after`. With `t = 0` denoising is
/// skipped and every tournament relation falls back to discovery supporters.
pub fn run_pipeline(
    test: &Corpus,
    train: &Corpus,
    cfg: &PipelineConfig,
    backend: &dyn Generator,
    templates: &Templates,
) -> Result<PipelineOutput, InferError> {
    cfg.validate()?;
    let mut manifest = Manifest::new(cfg, backend, templates, test, train);

    let discovery = run_discovery(test, train, cfg, backend, templates)?;
    manifest.stages.push(StageStats {
        stage: Some(Stage::Discovery),
        requests: discovery.attempts_total(),
        failures: discovery.failures,
        abstentions: Some(discovery.abstentions),
        discovered_relations: Some(discovery.discovered.len()),
        ..Default::default()
    });

    let denoising = if cfg.stop_after >= Stage::Denoising && cfg.t > 0 {
        let d = run_denoising(&discovery, test, cfg, backend, templates)?;
        manifest.stages.push(StageStats {
            stage: Some(Stage::Denoising),
            requests: d.requests,
            failures: d.failures,
            batches_per_candidate: Some(d.d),
            reliable_entries: Some(d.reliable.len()),
            resolved_per_round: Some(d.rounds.iter().map(|r| r.resolved.len()).collect()),
            skipped_candidates: Some(d.skipped),
            ..Default::default()
        });
        Some(d)
    } else {
        None
    };

    let prediction = if cfg.stop_after >= Stage::Prediction {
        let empty = ReliableSet::default();
        let reliable = denoising.as_ref().map_or(&empty, |d| &d.reliable);
        let p = run_prediction(test, reliable, &discovery, cfg, backend, templates)?;
        let mut resolutions: IndexMap<String, usize> = IndexMap::new();
        for kind in [Resolution::Answered, Resolution::Reasked, Resolution::RetainedPrevious, Resolution::FirstCandidate] {
            let key = serde_json::to_value(kind).expect("enum serializes").as_str().expect("unit variant").to_string();
            let count = p.predictions.iter().flat_map(|f| &f.rounds).filter(|r| r.resolution == kind).count();
            resolutions.insert(key, count);
        }
        manifest.stages.push(StageStats {
            stage: Some(Stage::Prediction),
            requests: p.requests,
            failures: p.failures,
            resolutions: Some(resolutions),
            ..Default::default()
        });
        manifest.fallback_relations = p.fallback_relations.clone();
        Some(p)
    } else {
        None
    };

    Ok(PipelineOutput {
        test_ids: test.instances().map(|i| i.id.clone()).collect(),
        discovery,
        denoising,
        prediction,
        manifest,
    })
}

/// Records a failed run so the output directory explains itself.
pub fn write_failure_manifest(
    dir: &Path,
    cfg: &PipelineConfig,
    backend: &dyn Generator,
    templates: &Templates,
    test: &Corpus,
    train: &Corpus,
    error: &InferError,
) -> Result<(), InferError> {
    std::fs::create_dir_all(dir).map_err(|source| InferError::Io { path: dir.to_path_buf(), source })?;
    let mut manifest = Manifest::new(cfg, backend, templates, test, train);
    manifest.status = RunStatus::Failed;
    manifest.error = Some(error.to_string());
    write_json(&dir.join("manifest.json"), &manifest)
}
