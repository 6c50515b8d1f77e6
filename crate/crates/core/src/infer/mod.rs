//! Self-correcting inference: discovery, denoising, then a prediction
//! tournament.
//!
//! Instances inside a stage run concurrently up to `max_in_flight`; stages are
//! barriers. Every random choice comes from a stream keyed by the stage and
//! instance, and results are gathered in instance order, so outputs do not
//! depend on completion order.

mod denoising;
mod discovery;
mod output;
mod pipeline;
mod prediction;

use std::path::PathBuf;

pub use denoising::{run_denoising, BatchVerdict, CandidateCheck, DenoisingResult, RoundSummary};
pub use discovery::{run_discovery, DiscoveryAttempt, DiscoveryResult, InstanceDiscovery};
pub use output::{read_predictions, write_jsonl};
pub use pipeline::{
    run_pipeline, write_failure_manifest, CorpusDigest, Manifest, PipelineOutput, RunStatus, StageStats, MANIFEST_FORMAT, UNANSWERED,
    MANIFEST_VERSION,
};
pub use prediction::{run_prediction, tournament_rounds, FinalPrediction, PredictionResult, Resolution, TournamentRound};

use crate::backend::{BackendError, GenerationRequest, Generator, RequestTag};
use crate::domain::{DomainError, Stage};
use crate::prompt::PromptError;

#[derive(Debug, thiserror::Error)]
pub enum InferError {
    #[error("invalid configuration: {0}")]
    Config(#[from] DomainError),
    #[error("test corpus is empty")]
    EmptyTest,
    #[error("training corpus must be fully labeled")]
    UnlabeledTrain,
    #[error("discovery aborted: {failed} of {total} attempts failed at the backend")]
    DiscoveryAborted { failed: usize, total: usize },
    #[error("{stage} aborted: {failed} of {total} requests failed at the backend")]
    StageAborted { stage: Stage, failed: usize, total: usize },
    #[error("discovery produced no relations")]
    NothingDiscovered,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl InferError {
    /// Whether the failure came from the generation backend.
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, InferError::DiscoveryAborted { .. } | InferError::StageAborted { .. })
    }
}

/// Runs `f` over `items` on at most `threads` workers, returning results in
/// item order.
fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .thread_name(|i| format!("orex-infer-{i}"))
        .build()
        .expect("thread pool starts");
    pool.install(|| items.par_iter().map(f).collect())
}

/// Backend call outcome: generated text or the error that ended it.
fn ask(backend: &dyn Generator, prompt: String, temperature: f32, cfg: &crate::domain::PipelineConfig, tag: RequestTag) -> Result<String, BackendError> {
    let request = GenerationRequest {
        prompt,
        max_tokens: cfg.generation.max_tokens,
        temperature,
        stop: cfg.generation.stop.clone(),
        tag,
    };
    backend.generate(&request)
}

fn check_failure_rate(stage: Stage, failed: usize, total: usize) -> Result<(), InferError> {
    if total > 0 && failed * 2 > total {
        return Err(match stage {
            Stage::Discovery => InferError::DiscoveryAborted { failed, total },
            _ => InferError::StageAborted { stage, failed, total },
        });
    }
    Ok(())
}
