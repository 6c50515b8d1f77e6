use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, Context};
use indexmap::IndexMap;
use orex_core::backend::{
    Confusion, DrawScope, Generator, HttpBackend, HttpConfig, RecordingBackend, ReplayBackend, SimulatedOracle,
    SimulatedOracleConfig,
};
use orex_core::data::{
    build_fewrel_lt, load_fewrel, load_relation_names, load_tacred, read_gold, read_normalized, split_known_new, write_gold,
    write_normalized, SplitSpec,
};
use orex_core::eval::{evaluate as score, PredictionMap};
use orex_core::infer::{read_predictions, run_pipeline, write_failure_manifest, Manifest, UNANSWERED};
use orex_core::probe::{run_probe, ProbeConfig, ProbeError};
use orex_core::prompt::{PromptTemplate, Templates};
use orex_core::{validate_corpus, Corpus, GenerationParams, GoldMap, PipelineConfig, RelationName, Role, Stage};

use crate::args::{BackendArgs, BackendKind, ConfusionKind, DrawScopeArg, EvaluateArgs, Format, IngestArgs, ProbeArgs, RunArgs};
use crate::{backend, config, user, Failure};

fn require<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T, Failure> {
    value.as_ref().ok_or_else(|| user(anyhow!("missing --{} (flag or config key `{}`)", name.replace('_', "-"), name)))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display())).map_err(user)
}

pub fn ingest(a: IngestArgs) -> Result<(), Failure> {
    if a.pid2name.is_some() && a.format != Format::Fewrel {
        return Err(user(anyhow!("--pid2name applies to --format fewrel only")));
    }
    let names = a.pid2name.as_deref().map(load_relation_names).transpose().map_err(user)?;
    let mut entries = Vec::new();
    for path in &a.inputs {
        let corpus = match a.format {
            Format::Fewrel => load_fewrel(path, names.as_ref()),
            Format::Tacred => load_tacred(path),
            Format::Normalized => read_normalized(path, Role::Train),
        }
        .map_err(user)?;
        entries.extend(corpus.entries);
    }
    let corpus = Corpus::from_entries(Role::Train, entries);
    let findings = validate_corpus(&corpus).findings;
    if let Some(first) = findings.first() {
        return Err(user(anyhow!("input failed validation with {} finding(s), first: {first:?}", findings.len())));
    }
    let relations = corpus.relations().len();
    if a.known_first == 0 || a.known_first >= relations {
        return Err(user(anyhow!("--known-first must lie in 1..{relations} for {relations} relations")));
    }
    let mut spec = SplitSpec::first_known(&corpus, a.known_first);
    spec.mixed_test = a.mixed;
    spec.mixed_holdout = a.holdout;
    let split = if a.long_tail { build_fewrel_lt(&corpus, &spec, a.seed) } else { split_known_new(&corpus, &spec) }.map_err(user)?;

    create_dir(&a.out)?;
    write_normalized(&a.out.join("train.jsonl"), &split.train).map_err(user)?;
    write_normalized(&a.out.join("test.jsonl"), &split.test).map_err(user)?;
    write_gold(&a.out.join("gold.json"), &split.gold).map_err(user)?;
    let spec_path = a.out.join("split.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(&spec).expect("spec serializes") + "\n")
        .with_context(|| format!("cannot write {}", spec_path.display()))
        .map_err(user)?;

    let mut per_relation: IndexMap<&RelationName, usize> = IndexMap::new();
    for rel in split.gold.values() {
        *per_relation.entry(rel).or_default() += 1;
    }
    let (min, max) = per_relation.values().fold((usize::MAX, 0), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    println!("relations: {} known, {} new", spec.known_relations.len(), spec.new_relations.len());
    println!("train: {} instances", split.train.len());
    println!("test: {} instances over {} relations ({min}..{max} per relation)", split.test.len(), per_relation.len());
    println!("wrote {}", a.out.display());
    Ok(())
}

fn templates(b: &BackendArgs) -> Result<Templates, Failure> {
    let mut t = Templates::default();
    if let Some(p) = &b.rd_template {
        t.rd = PromptTemplate::load(p).map_err(user)?;
    }
    if let Some(p) = &b.rp_template {
        t.rp = PromptTemplate::load(p).map_err(user)?;
    }
    Ok(t)
}

fn generation(b: &BackendArgs) -> GenerationParams {
    let mut g = GenerationParams::default();
    if let Some(m) = b.max_tokens {
        g.max_tokens = m;
    }
    if let Some(t) = b.temperature {
        g.discovery_temperature = t;
        g.denoising_temperature = t;
        g.prediction_temperature = t;
    }
    g
}

/// The selected backend, optionally recording every completion.
enum Service {
    Plain(Box<dyn Generator>),
    Recording(RecordingBackend<Box<dyn Generator>>, PathBuf),
}

impl Service {
    fn generator(&self) -> &dyn Generator {
        match self {
            Service::Plain(g) => g.as_ref(),
            Service::Recording(r, _) => r,
        }
    }

    fn save(&self) -> Result<(), Failure> {
        if let Service::Recording(r, path) = self {
            r.save(path).with_context(|| format!("cannot write recordings to {}", path.display())).map_err(user)?;
        }
        Ok(())
    }
}

fn build_backend(b: &BackendArgs, gold: Option<&GoldMap>, templates: &Templates, seed: u64) -> Result<Service, Failure> {
    let generator: Box<dyn Generator> = match b.backend.unwrap_or(BackendKind::Simulator) {
        BackendKind::Simulator => {
            let gold = gold.ok_or_else(|| user(anyhow!("the simulator backend needs gold labels (--gold)")))?;
            let mut cfg = SimulatedOracleConfig::new(
                gold.clone(),
                b.p_hit_target_in_demos.unwrap_or(0.9),
                b.p_hit_otherwise.unwrap_or(0.5),
                b.sim_seed.unwrap_or(seed),
            );
            cfg.confusion = match b.confusion.unwrap_or(ConfusionKind::Listed) {
                ConfusionKind::Listed => Confusion::Listed,
                ConfusionKind::Novel => Confusion::Novel { pool: b.novel_pool.unwrap_or(16) },
            };
            cfg.draw_scope = match b.draw_scope.unwrap_or(DrawScopeArg::Attempt) {
                DrawScopeArg::Attempt => DrawScope::Attempt,
                DrawScopeArg::Request => DrawScope::Request,
            };
            Box::new(SimulatedOracle::with_templates(cfg, templates).map_err(user)?)
        }
        BackendKind::Http => {
            let mut cfg = HttpConfig::new(require(&b.endpoint, "endpoint")?.clone(), require(&b.model, "model")?.clone());
            cfg.max_in_flight = b.max_in_flight.unwrap_or(cfg.max_in_flight);
            if let Some(ms) = b.request_timeout_ms {
                cfg.request_timeout = Duration::from_millis(ms);
            }
            if let Some(n) = b.max_attempts {
                cfg.retry.max_attempts = n;
            }
            Box::new(HttpBackend::new(cfg).map_err(user)?)
        }
        BackendKind::Replay => Box::new(ReplayBackend::load(require(&b.replay, "replay")?).map_err(user)?),
    };
    Ok(match &b.record {
        Some(path) => Service::Recording(RecordingBackend::new(generator), path.clone()),
        None => Service::Plain(generator),
    })
}

pub fn run(a: RunArgs) -> Result<(), Failure> {
    let a = config::overlay(&a, a.config.as_deref()).map_err(user)?;
    let out = require(&a.out, "out")?;
    let test = read_normalized(require(&a.test, "test")?, Role::Test).map_err(user)?;
    let train = read_normalized(require(&a.train, "train")?, Role::Train).map_err(user)?;
    let gold = a.gold.as_deref().map(read_gold).transpose().map_err(user)?;

    let defaults = PipelineConfig::default();
    let cfg = PipelineConfig {
        n: a.n.unwrap_or(defaults.n),
        k: a.k.unwrap_or(defaults.k),
        t: a.t.unwrap_or(defaults.t),
        d: a.d.unwrap_or(defaults.d),
        seed: a.seed.unwrap_or(defaults.seed),
        max_in_flight: a.backend.max_in_flight.unwrap_or(defaults.max_in_flight),
        consistency: a.consistency.unwrap_or(defaults.consistency),
        stop_after: a.stop_after.unwrap_or(Stage::Prediction),
        generation: generation(&a.backend),
    };
    cfg.validate().map_err(user)?;
    let templates = templates(&a.backend)?;
    let service = build_backend(&a.backend, gold.as_ref(), &templates, cfg.seed)?;

    let output = match run_pipeline(&test, &train, &cfg, service.generator(), &templates) {
        Ok(o) => o,
        Err(e) => {
            if let Err(w) = write_failure_manifest(out, &cfg, service.generator(), &templates, &test, &train, &e) {
                eprintln!("warning: could not write the failure manifest: {w}");
            }
            service.save()?;
            return Err(if e.is_backend_failure() { backend(e) } else { user(e) });
        }
    };
    output.write(out).map_err(user)?;
    service.save()?;
    for s in &output.manifest.stages {
        if let Some(stage) = s.stage {
            println!("{stage}: {} requests, {} failures", s.requests, s.failures);
        }
    }
    if let Some(gold) = &gold {
        let report = output.evaluate(gold).map_err(user)?;
        let path = out.join("report.json");
        report.write(&path).with_context(|| format!("cannot write {}", path.display())).map_err(user)?;
        println!("{}", report.summary_line());
    }
    println!("wrote {}", out.display());
    Ok(())
}

pub fn probe(a: ProbeArgs) -> Result<(), Failure> {
    let a = config::overlay(&a, a.config.as_deref()).map_err(user)?;
    let out = require(&a.out, "out")?;
    let pool = read_normalized(require(&a.pool, "pool")?, Role::Train).map_err(user)?;
    if !pool.is_labeled() {
        return Err(user(anyhow!("the probe pool must be fully labeled")));
    }
    let gold: GoldMap = pool.labeled_instances().map(|l| (l.instance.id, l.relation)).collect();
    let defaults = ProbeConfig::default();
    let cfg = ProbeConfig {
        grid: a.grid.clone().unwrap_or(defaults.grid),
        seed: a.seed.unwrap_or(defaults.seed),
        limit: a.limit,
        generation: generation(&a.backend),
    };
    let templates = templates(&a.backend)?;
    let service = build_backend(&a.backend, Some(&gold), &templates, cfg.seed)?;
    let report = match run_probe(&pool, &cfg, service.generator(), &templates) {
        Ok(r) => r,
        Err(e @ ProbeError::Aborted { .. }) => {
            service.save()?;
            return Err(backend(e));
        }
        Err(e) => return Err(user(e)),
    };
    report.write(out).map_err(user)?;
    service.save()?;
    println!("{:<16} {:>6} {:>9} {:>9}", "setting", "demos", "instances", "accuracy");
    for r in &report.rows {
        println!("{:<16} {:>6} {:>9} {:>9.4}", r.setting.name(), r.demos, r.instances, r.accuracy);
    }
    println!("wrote {}", out.display());
    Ok(())
}

/// Discovery answers per gold instance, in attempt order, and the attempt
/// count from the run manifest (or the largest attempt index seen).
fn discovery_attempts(path: &Path, gold: &GoldMap) -> Result<(IndexMap<String, Vec<RelationName>>, u32), Failure> {
    let mut lines = read_predictions(path).map_err(user)?;
    lines.sort_by_key(|l| l.attempt_k);
    let mut map: IndexMap<String, Vec<RelationName>> = gold.keys().map(|id| (id.clone(), Vec::new())).collect();
    for l in &lines {
        let slot = map
            .get_mut(&l.instance_id)
            .ok_or_else(|| user(anyhow!("{}: instance {} is not in the gold file", path.display(), l.instance_id)))?;
        slot.push(l.relation.clone());
    }
    let manifest_k = std::fs::read_to_string(path.with_file_name("manifest.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
        .map(|m| m.config.k as u32);
    let k = manifest_k.unwrap_or_else(|| lines.iter().map(|l| l.attempt_k).max().unwrap_or(0));
    Ok((map, k))
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let lines = read_predictions(&a.predictions).map_err(user)?;
    let gold = read_gold(&a.gold).map_err(user)?;
    let mut pred = PredictionMap::new();
    for l in lines {
        if !gold.contains_key(&l.instance_id) {
            return Err(user(anyhow!("prediction for {} has no gold label", l.instance_id)));
        }
        if pred.insert(l.instance_id.clone(), l.relation).is_some() {
            return Err(user(anyhow!("instance {} is predicted twice", l.instance_id)));
        }
    }
    let stand_in = RelationName::new(UNANSWERED).expect("constant is a valid name");
    let missing = gold.keys().filter(|id| !pred.contains_key(*id)).count();
    if missing > 0 {
        eprintln!("warning: {missing} instance(s) without a prediction are scored as `{UNANSWERED}`");
    }
    let ordered: PredictionMap =
        gold.keys().map(|id| (id.clone(), pred.get(id).cloned().unwrap_or_else(|| stand_in.clone()))).collect();

    let trace = a.discovery.clone().or_else(|| Some(a.predictions.with_file_name("discovery.jsonl")).filter(|p| p.exists()));
    let attempts = trace.as_deref().map(|p| discovery_attempts(p, &gold)).transpose()?;
    let report = score(&ordered, &gold, attempts.as_ref().map(|(m, k)| (m, *k))).map_err(user)?;
    let out = a.out.unwrap_or_else(|| a.predictions.with_file_name("report.json"));
    report.write(&out).with_context(|| format!("cannot write {}", out.display())).map_err(user)?;
    println!("{}", report.summary_line());
    Ok(())
}
