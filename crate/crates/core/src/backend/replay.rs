//! Record/replay of completions keyed by request tag, for offline tests.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, GenerationRequest, Generator};

/// One line of a recording file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordedCompletion {
    pub tag: String,
    pub text: String,
}

#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    recorded: BTreeMap<String, String>,
}

impl ReplayBackend {
    pub fn new(recorded: impl IntoIterator<Item = RecordedCompletion>) -> Self {
        Self { recorded: recorded.into_iter().map(|r| (r.tag, r.text)).collect() }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let content = std::fs::read_to_string(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let lines = content
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<RecordedCompletion>(l)
                    .map_err(|e| BackendError::Config(format!("{}: line {}: {e}", path.display(), i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(lines))
    }

    pub fn len(&self) -> usize {
        self.recorded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recorded.is_empty()
    }
}

impl Generator for ReplayBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let key = request.tag.to_string();
        self.recorded.get(&key).cloned().ok_or(BackendError::MissingRecording(key))
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "replay", "recordings": self.recorded.len() })
    }
}

/// Wraps a backend and keeps every successful completion.
pub struct RecordingBackend<G> {
    inner: G,
    log: Mutex<BTreeMap<String, String>>,
}

impl<G: Generator> RecordingBackend<G> {
    pub fn new(inner: G) -> Self {
        Self { inner, log: Mutex::new(BTreeMap::new()) }
    }

    pub fn recordings(&self) -> Vec<RecordedCompletion> {
        let log = self.log.lock().expect("recording log poisoned");
        log.iter().map(|(tag, text)| RecordedCompletion { tag: tag.clone(), text: text.clone() }).collect()
    }

    /// Writes recordings sorted by tag, one JSON object per line.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in self.recordings() {
            writeln!(out, "{}", serde_json::to_string(&r).expect("plain struct serializes"))?;
        }
        out.flush()
    }
}

impl<G: Generator> Generator for RecordingBackend<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        let text = self.inner.generate(request)?;
        self.log.lock().expect("recording log poisoned").insert(request.tag.to_string(), text.clone());
        Ok(text)
    }

    fn describe(&self) -> serde_json::Value {
        self.inner.describe()
    }
}
