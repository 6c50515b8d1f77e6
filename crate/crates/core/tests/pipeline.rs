mod common;

use std::collections::HashSet;

use orex_core::backend::{BackendError, GenerationRequest, Generator, Phase};
use orex_core::infer::{
    run_denoising, run_discovery, run_pipeline, run_prediction, InferError, Resolution, RunStatus,
};
use orex_core::prompt::Templates;
use orex_core::{DemoBatches, PipelineConfig, RelationName, ReliableSet, Stage};

/// A backend driven by a closure.
struct Scripted<F>(F);

impl<F> Generator for Scripted<F>
where
    F: Fn(&GenerationRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        (self.0)(request)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "scripted" })
    }
}

fn listed(prompt: &str) -> Vec<String> {
    let prefix = Templates::default().rp.constraint_prefix().to_string();
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(prefix.as_str()))
        .map(|l| l.trim_end_matches('.').split(", ").map(str::to_string).collect())
        .unwrap_or_default()
}

fn cfg(seed: u64) -> PipelineConfig {
    PipelineConfig { seed, ..Default::default() }
}

#[test]
fn identical_runs_write_identical_files() {
    let split = common::scenario(8, 6, 5);
    let oracle = common::oracle(&split, 0.9, 0.5, 3);
    let config = PipelineConfig { max_in_flight: 4, ..cfg(11) };
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &dirs {
        run_pipeline(&split.test, &split.train, &config, &oracle, &Templates::default()).unwrap().write(dir.path()).unwrap();
    }
    let names = [
        "predictions.jsonl",
        "discovery.jsonl",
        "reliable.jsonl",
        "trace_discovery.jsonl",
        "trace_denoising.jsonl",
        "trace_prediction.jsonl",
        "manifest.json",
    ];
    for name in names {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs between runs");
    }

    let serial = run_pipeline(&split.test, &split.train, &cfg(11), &oracle, &Templates::default()).unwrap();
    let parallel = run_pipeline(&split.test, &split.train, &config, &oracle, &Templates::default()).unwrap();
    assert_eq!(serial.final_lines(), parallel.final_lines());
    assert_eq!(serial.denoising, parallel.denoising);
    assert_eq!(serial.prediction, parallel.prediction);
}

#[test]
fn discovery_makes_k_attempts_per_instance() {
    let split = common::scenario(6, 2, 5);
    let oracle = common::oracle(&split, 0.9, 0.5, 0);
    let disc = run_discovery(&split.test, &split.train, &cfg(1), &oracle, &Templates::default()).unwrap();
    assert_eq!(disc.instances.len(), 10);
    assert_eq!(disc.attempts_total(), 30);
    assert!(disc.candidates().len() <= 30);
    for inst in &disc.instances {
        assert_eq!(inst.attempts.len(), 3);
        for a in &inst.attempts {
            assert_eq!(a.demo_relations.len(), 4);
            assert!(a.demo_relations.iter().all(|r| split.train.relations().contains(r)));
        }
    }
    let union: HashSet<_> = disc.candidates().into_iter().map(|c| c.relation).collect();
    assert_eq!(union, disc.discovered.iter().cloned().collect());
}

#[test]
fn forced_hits_discover_exactly_the_gold_relations() {
    let split = common::scenario(6, 2, 5);
    let oracle = common::oracle(&split, 0.0, 1.0, 0);
    let disc = run_discovery(&split.test, &split.train, &cfg(1), &oracle, &Templates::default()).unwrap();
    let gold: HashSet<_> = split.gold.values().cloned().collect();
    assert_eq!(disc.discovered.iter().cloned().collect::<HashSet<_>>(), gold);
}

#[test]
fn single_attempt_matches_first_attempt_of_many() {
    let split = common::scenario(6, 3, 4);
    let oracle = common::oracle(&split, 0.9, 0.5, 5);
    let one = run_discovery(&split.test, &split.train, &PipelineConfig { k: 1, ..cfg(2) }, &oracle, &Templates::default()).unwrap();
    let three = run_discovery(&split.test, &split.train, &cfg(2), &oracle, &Templates::default()).unwrap();
    assert!(one.instances.iter().all(|i| i.attempts.len() == 1));
    assert_eq!(one.first_answers(), three.first_answers());
}

#[test]
fn certain_predictor_is_always_right_when_gold_was_discovered() {
    let split = common::scenario(10, 6, 6);
    let oracle = common::oracle(&split, 1.0, 0.6, 9);
    let out = run_pipeline(&split.test, &split.train, &cfg(4), &oracle, &Templates::default()).unwrap();
    let discovered: HashSet<_> = out.discovery.discovered.iter().collect();
    let answers = out.final_answers();
    for (id, gold) in &split.gold {
        if discovered.contains(gold) {
            assert_eq!(&answers[id], gold, "instance {id}");
        }
    }
}

#[test]
fn forty_relations_take_thirteen_rounds() {
    let split = common::scenario(8, 40, 3);
    let oracle = common::oracle(&split, 0.9, 1.0, 0);
    let config = PipelineConfig { k: 1, t: 0, ..cfg(0) };
    let out = run_pipeline(&split.test, &split.train, &config, &oracle, &Templates::default()).unwrap();
    assert_eq!(out.discovery.discovered.len(), 40);
    for p in &out.prediction.as_ref().unwrap().predictions {
        assert_eq!(p.rounds.len(), 13);
        assert_eq!(p.rounds[0].candidates.len(), 4);
    }
}

#[test]
fn pipeline_invariants_hold() {
    let split = common::scenario(12, 10, 6);
    let oracle = common::oracle(&split, 0.8, 0.5, 21);
    let config = cfg(8);
    let out = run_pipeline(&split.test, &split.train, &config, &oracle, &Templates::default()).unwrap();
    let disc = &out.discovery;
    let den = out.denoising.as_ref().unwrap();
    let pred = out.prediction.as_ref().unwrap();

    let d = DemoBatches::Auto.resolve(disc.discovered.len(), config.n);
    assert_eq!(den.d, d);
    for (rel, entry) in den.reliable.iter() {
        assert_eq!(entry.verdicts.len(), d);
        assert!(entry.verdicts.iter().all(|v| v == rel.as_str()));
    }
    for pair in den.rounds.windows(2) {
        let resolved: HashSet<_> = pair[0].resolved.iter().collect();
        for id in &pair[1].examined {
            assert!(pair[0].examined.contains(id) && !resolved.contains(id));
        }
    }
    assert_eq!(den.rounds.len(), config.t);

    for p in &pred.predictions {
        let seen: HashSet<&RelationName> = p.rounds.iter().flat_map(|r| &r.candidates).collect();
        for rel in &disc.discovered {
            assert!(seen.contains(rel) || p.skipped_relations.contains(rel), "{} never competed for {}", rel, p.instance_id);
        }
        for pair in p.rounds.windows(2) {
            assert!(pair[1].candidates.contains(&pair[0].winner));
        }
        assert!(disc.discovered.contains(&p.relation));
        assert_eq!(p.rounds.last().unwrap().winner, p.relation);
        if let Some(seed) = &p.seeded_with {
            assert_eq!(Some(seed), den.reliable.relation_of(&p.instance_id));
            assert!(p.rounds[0].candidates.contains(seed));
        }
        assert!(p.rounds.iter().all(|r| !r.demo_ids.contains(&p.instance_id)));
    }
    for check in &den.checks {
        assert!(check.batches.iter().all(|b| !b.demo_ids.contains(&check.instance_id)));
    }
    for inst in &disc.instances {
        assert!(inst.attempts.iter().all(|a| !a.demo_ids.contains(&inst.instance_id)));
    }
}

#[test]
fn purity_beats_discovery_accuracy() {
    let split = common::scenario(12, 10, 8);
    let mut purity = 0.0;
    let mut accuracy = 0.0;
    for seed in 0..5 {
        let oracle = common::oracle(&split, 0.9, 0.5, seed);
        let out = run_pipeline(&split.test, &split.train, &PipelineConfig { stop_after: Stage::Denoising, ..cfg(seed) }, &oracle, &Templates::default())
            .unwrap();
        let reliable = out.reliable().unwrap();
        purity += reliable.iter().filter(|(r, e)| split.gold[&e.instance_id] == **r).count() as f64 / reliable.len() as f64;
        let first = out.discovery.first_answers();
        accuracy += split.gold.iter().filter(|(id, g)| first.get(*id) == Some(g)).count() as f64 / split.gold.len() as f64;
    }
    assert!(purity >= accuracy, "purity {purity} < accuracy {accuracy}");
}

#[test]
fn zero_rounds_skip_denoising() {
    let split = common::scenario(8, 4, 4);
    let oracle = common::oracle(&split, 0.9, 0.5, 1);
    let out = run_pipeline(&split.test, &split.train, &PipelineConfig { t: 0, ..cfg(3) }, &oracle, &Templates::default()).unwrap();
    assert!(out.denoising.is_none());
    let pred = out.prediction.as_ref().unwrap();
    assert_eq!(pred.fallback_relations, out.discovery.discovered);
    assert!(pred.predictions.iter().all(|p| p.seeded_with.is_none()));
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path()).unwrap();
    assert!(!dir.path().join("trace_denoising.jsonl").exists());
}

#[test]
fn stopping_after_discovery_reports_first_answers() {
    let split = common::scenario(8, 4, 4);
    let oracle = common::oracle(&split, 0.9, 0.5, 1);
    let config = PipelineConfig { stop_after: Stage::Discovery, ..cfg(3) };
    let out = run_pipeline(&split.test, &split.train, &config, &oracle, &Templates::default()).unwrap();
    assert!(out.denoising.is_none() && out.prediction.is_none());
    assert_eq!(out.final_answers(), out.discovery.first_answers());
    assert!(out.final_lines().iter().all(|l| l.stage == Stage::Discovery));
    assert_eq!(out.manifest.stages.len(), 1);
}

#[test]
fn dissent_defers_to_the_next_round() {
    let split = common::scenario(8, 3, 4);
    // Discovery always answers gold; the predictor dissents on batch 0 of
    // round 1 and agrees otherwise.
    let gold = split.gold.clone();
    let backend = Scripted(move |req: &GenerationRequest| {
        let g = gold[&req.tag.instance_id].to_string();
        match req.tag.phase {
            Phase::Denoising if req.tag.round == 1 && req.tag.step == 0 => Ok("something else".into()),
            _ => Ok(g),
        }
    });
    let config = PipelineConfig { stop_after: Stage::Denoising, ..cfg(0) };
    let out = run_pipeline(&split.test, &split.train, &config, &backend, &Templates::default()).unwrap();
    let den = out.denoising.unwrap();
    assert!(den.rounds[0].resolved.is_empty());
    assert_eq!(den.rounds[1].resolved.len(), split.gold.len());
    assert!(den.rounds[2].examined.is_empty());
    assert!(den.reliable.iter().all(|(_, e)| e.round == 2));
}

#[test]
fn nothing_resolves_when_the_predictor_never_agrees() {
    let split = common::scenario(8, 3, 4);
    let gold = split.gold.clone();
    let backend = Scripted(move |req: &GenerationRequest| match req.tag.phase {
        Phase::Discovery => Ok(gold[&req.tag.instance_id].to_string()),
        _ => Ok("none of these".into()),
    });
    let disc = run_discovery(&split.test, &split.train, &cfg(0), &backend, &Templates::default()).unwrap();
    let den = run_denoising(&disc, &split.test, &cfg(0), &backend, &Templates::default()).unwrap();
    assert!(den.reliable.is_empty());
    assert_eq!(den.rounds.len(), 3);
    assert!(den.rounds.iter().all(|r| r.examined.len() == split.gold.len()));
}

#[test]
fn out_of_set_answers_are_reasked_then_retained() {
    let split = common::scenario(8, 9, 3);
    let gold = split.gold.clone();
    let backend = Scripted(move |req: &GenerationRequest| {
        let tag = &req.tag;
        match tag.phase {
            Phase::Discovery => Ok(gold[&tag.instance_id].to_string()),
            // Round 1 answers its first listed relation; round 2 goes out of
            // set once then answers; later rounds never answer inside.
            Phase::Prediction => match (tag.step, tag.retry) {
                (1, _) => Ok(listed(&req.prompt)[0].clone()),
                (2, 0) => Ok("off the list".into()),
                (2, _) => Ok(listed(&req.prompt).last().unwrap().clone()),
                _ => Ok("still off the list".into()),
            },
            _ => Ok(String::new()),
        }
    });
    let config = PipelineConfig { t: 0, ..cfg(0) };
    let out = run_pipeline(&split.test, &split.train, &config, &backend, &Templates::default()).unwrap();
    for p in &out.prediction.as_ref().unwrap().predictions {
        assert_eq!(p.rounds.len(), 3);
        assert_eq!(p.rounds[0].resolution, Resolution::Answered);
        assert_eq!(p.rounds[1].resolution, Resolution::Reasked);
        assert_eq!(p.rounds[1].outputs.len(), 2);
        assert_eq!(p.rounds[2].resolution, Resolution::RetainedPrevious);
        assert_eq!(p.rounds[2].winner, p.rounds[1].winner);
        assert_eq!(p.relation, p.rounds[1].winner);
    }
}

#[test]
fn first_round_without_valid_answer_takes_first_candidate() {
    let split = common::scenario(8, 3, 3);
    let gold = split.gold.clone();
    let backend = Scripted(move |req: &GenerationRequest| match req.tag.phase {
        Phase::Discovery => Ok(gold[&req.tag.instance_id].to_string()),
        _ => Err(BackendError::Server { status: 400, message: "bad".into() }),
    });
    let disc = run_discovery(&split.test, &split.train, &cfg(0), &backend, &Templates::default()).unwrap();
    let err = run_prediction(&split.test, &ReliableSet::default(), &disc, &cfg(0), &backend, &Templates::default()).unwrap_err();
    assert!(matches!(err, InferError::StageAborted { stage: Stage::Prediction, .. }));

    let backend = Scripted(|req: &GenerationRequest| match req.tag.phase {
        Phase::Discovery => Ok("relation 9".to_string()),
        _ => Ok("unlisted".into()),
    });
    let disc = run_discovery(&split.test, &split.train, &cfg(0), &backend, &Templates::default()).unwrap();
    let pred = run_prediction(&split.test, &ReliableSet::default(), &disc, &cfg(0), &backend, &Templates::default()).unwrap();
    for p in &pred.predictions {
        assert_eq!(p.rounds[0].resolution, Resolution::FirstCandidate);
    }
}

#[test]
fn backend_outage_aborts_discovery() {
    let split = common::scenario(6, 2, 3);
    let backend = Scripted(|_: &GenerationRequest| Err(BackendError::Timeout { attempts: 6 }));
    let err = run_pipeline(&split.test, &split.train, &cfg(0), &backend, &Templates::default()).unwrap_err();
    assert!(matches!(err, InferError::DiscoveryAborted { failed: 18, total: 18 }));
    assert!(err.is_backend_failure());
}

#[test]
fn unparseable_outputs_are_abstentions() {
    let split = common::scenario(6, 2, 3);
    let gold = split.gold.clone();
    let backend = Scripted(move |req: &GenerationRequest| {
        if req.tag.attempt == 2 {
            Ok("\n  \n".into())
        } else {
            Ok(gold[&req.tag.instance_id].to_string())
        }
    });
    let config = PipelineConfig { stop_after: Stage::Discovery, ..cfg(0) };
    let out = run_pipeline(&split.test, &split.train, &config, &backend, &Templates::default()).unwrap();
    assert_eq!(out.discovery.abstentions, 6);
    assert_eq!(out.discovery.failures, 0);
    assert_eq!(out.manifest.status, RunStatus::Complete);
    assert_eq!(out.discovery.discovered.len(), 2);
}

#[test]
fn manifest_records_provenance() {
    let split = common::scenario(8, 4, 4);
    let oracle = common::oracle(&split, 0.9, 0.5, 1);
    let out = run_pipeline(&split.test, &split.train, &cfg(77), &oracle, &Templates::default()).unwrap();
    let m = &out.manifest;
    assert_eq!(m.seed, 77);
    assert_eq!(m.templates["rd"], "rd-v1");
    assert_eq!(m.templates["rp"], "rp-v1");
    assert_eq!(m.backend["kind"], "simulator");
    assert_eq!(m.corpora["test"].instances, 16);
    assert!(!m.corpora["test"].labeled);
    assert_eq!(m.stages.len(), 3);
    let text = serde_json::to_string(m).unwrap();
    assert!(!text.contains("timestamp"));
}
