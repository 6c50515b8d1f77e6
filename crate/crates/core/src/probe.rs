//! Demonstration-setting probe: how often the predictor names the gold
//! relation with no demonstrations, with demonstrations lacking the gold
//! relation, and with demonstrations containing it, across demo counts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{GenerationRequest, Generator, Phase, RequestTag};
use crate::domain::{Corpus, GenerationParams, LabeledInstance};
use crate::prompt::{parse_generated_relation, sample_rd_demos, sample_rp_demos, DemoMode, DemoPool, DemoSet, PromptError, Templates};
use crate::seed::SeedStream;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("probe needs a labeled evaluation pool")]
    Unlabeled,
    #[error("invalid probe configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("probe aborted: {failed} of {total} requests failed at the backend")]
    Aborted { failed: usize, total: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSetting {
    ZeroShot,
    WithoutTarget,
    WithTarget,
}

impl ProbeSetting {
    pub const ALL: [ProbeSetting; 3] = [ProbeSetting::ZeroShot, ProbeSetting::WithoutTarget, ProbeSetting::WithTarget];

    pub fn name(self) -> &'static str {
        match self {
            ProbeSetting::ZeroShot => "zero_shot",
            ProbeSetting::WithoutTarget => "without_target",
            ProbeSetting::WithTarget => "with_target",
        }
    }

    fn index(self) -> u32 {
        self as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Demonstration counts to try.
    pub grid: Vec<usize>,
    pub seed: u64,
    /// Evaluate only the first `limit` instances.
    pub limit: Option<usize>,
    pub generation: GenerationParams,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { grid: vec![4, 8, 16], seed: 0, limit: None, generation: GenerationParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub setting: ProbeSetting,
    /// Grid value; zero-shot prompts carry no demonstrations regardless.
    pub demos: usize,
    pub instances: usize,
    pub correct: usize,
    pub unanswered: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub setting: ProbeSetting,
    pub demos: usize,
    pub instance_id: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub config: ProbeConfig,
    pub backend: serde_json::Value,
    pub template: String,
    pub rows: Vec<ProbeRow>,
    /// The rendered prompt of the first instance for each row.
    #[serde(skip)]
    pub samples: Vec<ProbeSample>,
}

impl ProbeReport {
    pub fn row(&self, setting: ProbeSetting, demos: usize) -> Option<&ProbeRow> {
        self.rows.iter().find(|r| r.setting == setting && r.demos == demos)
    }

    /// Writes `probe_report.json` and one `prompt_<setting>_<demos>.txt` per row.
    pub fn write(&self, dir: &Path) -> Result<(), ProbeError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| ProbeError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let report = dir.join("probe_report.json");
        let text = serde_json::to_string_pretty(self).expect("report serializes") + "\n";
        std::fs::write(&report, text).map_err(io(&report))?;
        for s in &self.samples {
            let path = dir.join(format!("prompt_{}_{}.txt", s.setting.name(), s.demos));
            std::fs::write(&path, &s.prompt).map_err(io(&path))?;
        }
        Ok(())
    }
}

fn demos_for(
    setting: ProbeSetting,
    item: &LabeledInstance,
    pool: &DemoPool,
    count: usize,
    seeds: &SeedStream,
) -> Result<DemoSet, PromptError> {
    let id = item.instance.id.as_str();
    let mut rng = seeds.rng(&["probe", setting.name(), &count.to_string(), id]);
    match setting {
        ProbeSetting::ZeroShot => Ok(DemoSet::empty(DemoMode::Rp)),
        ProbeSetting::WithoutTarget => {
            let mut set = sample_rd_demos(pool, count, &mut rng, Some(&item.relation), Some(id))?;
            set.mode = DemoMode::Rp;
            Ok(set)
        }
        ProbeSetting::WithTarget => sample_rp_demos(pool, &item.relation, count, &mut rng, Some(id)),
    }
}

/// Runs every setting for every grid value over the labeled `pool`. Each
/// instance's demonstrations come from the rest of the pool.
pub fn run_probe(corpus: &Corpus, cfg: &ProbeConfig, backend: &dyn Generator, templates: &Templates) -> Result<ProbeReport, ProbeError> {
    if !corpus.is_labeled() || corpus.is_empty() {
        return Err(ProbeError::Unlabeled);
    }
    if cfg.grid.is_empty() || cfg.grid.contains(&0) {
        return Err(ProbeError::Config("grid values must be positive".into()));
    }
    let relations = corpus.relations().len();
    if let Some(&max) = cfg.grid.iter().max() {
        if max >= relations {
            return Err(ProbeError::Config(format!("demo count {max} needs more than {relations} relations in the pool")));
        }
    }
    let pool = DemoPool::from_corpus(corpus);
    let seeds = SeedStream::new(cfg.seed);
    let items: Vec<LabeledInstance> = corpus.labeled_instances().take(cfg.limit.unwrap_or(usize::MAX)).collect();

    let mut report = ProbeReport {
        config: cfg.clone(),
        backend: backend.describe(),
        template: templates.rp.version.clone(),
        rows: Vec::new(),
        samples: Vec::new(),
    };
    let (mut failed, mut total) = (0, 0);
    for setting in ProbeSetting::ALL {
        for &count in &cfg.grid {
            let mut row = ProbeRow { setting, demos: count, instances: items.len(), correct: 0, unanswered: 0, accuracy: 0.0 };
            for item in &items {
                let demos = demos_for(setting, item, &pool, count, &seeds)?;
                let prompt = templates.render(&demos, &item.instance);
                if report.samples.len() < report.rows.len() + 1 {
                    report.samples.push(ProbeSample { setting, demos: count, instance_id: item.instance.id.clone(), prompt: prompt.clone() });
                }
                let request = GenerationRequest {
                    prompt,
                    max_tokens: cfg.generation.max_tokens,
                    temperature: cfg.generation.prediction_temperature,
                    stop: cfg.generation.stop.clone(),
                    tag: RequestTag::new(item.instance.id.clone(), Phase::Probe, setting.index()).round(count as u32),
                };
                total += 1;
                match backend.generate(&request) {
                    Ok(text) => match parse_generated_relation(&text) {
                        Ok(r) if r == item.relation => row.correct += 1,
                        Ok(_) => {}
                        Err(_) => row.unanswered += 1,
                    },
                    Err(_) => {
                        failed += 1;
                        row.unanswered += 1;
                    }
                }
            }
            row.accuracy = if row.instances == 0 { 0.0 } else { row.correct as f64 / row.instances as f64 };
            report.rows.push(row);
        }
    }
    if failed * 2 > total {
        return Err(ProbeError::Aborted { failed, total });
    }
    Ok(report)
}
