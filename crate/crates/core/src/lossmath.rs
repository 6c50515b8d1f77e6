//! Reference loss operations over per-token categorical distributions.
//!
//! All values are in nats. Log arguments are clamped at [`EPS`]. The
//! distribution-dump format lets an external training loop export the
//! tensors behind a logged loss so the values can be recomputed here.

use std::path::Path;

use serde::{Deserialize, Serialize};

/// Lower clamp for probabilities inside logarithms.
pub const EPS: f64 = 1e-12;

const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("parameter error: {0}")]
    Param(String),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("dump file {path}: {message}")]
    Dump { path: String, message: String },
}

/// Per-step probability vectors over one vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct DistributionSequence {
    steps: Vec<Vec<f64>>,
}

impl DistributionSequence {
    pub fn new(steps: Vec<Vec<f64>>) -> Result<Self, LossError> {
        let Some(first) = steps.first() else {
            return Err(LossError::Distribution("sequence has no steps".into()));
        };
        let vocab = first.len();
        if vocab == 0 {
            return Err(LossError::Distribution("empty vocabulary".into()));
        }
        for (t, row) in steps.iter().enumerate() {
            if row.len() != vocab {
                return Err(LossError::Distribution(format!("step {t} has {} entries, expected {vocab}", row.len())));
            }
            if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return Err(LossError::Distribution(format!("step {t} has invalid probability {p}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(LossError::Distribution(format!("step {t} sums to {sum}")));
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[Vec<f64>] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.steps[0].len()
    }
}

impl<'de> Deserialize<'de> for DistributionSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Self::new(Vec::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Target vocabulary ids, one per step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetTokens {
    pub ids: Vec<usize>,
}

impl TargetTokens {
    pub fn new(ids: Vec<usize>) -> Self {
        Self { ids }
    }
}

fn ln(p: f64) -> f64 {
    p.max(EPS).ln()
}

/// Mean negative log-likelihood of the targets.
pub fn sequence_ce(dist: &DistributionSequence, target: &TargetTokens) -> Result<f64, LossError> {
    if dist.len() != target.ids.len() {
        return Err(LossError::Shape(format!("{} steps but {} targets", dist.len(), target.ids.len())));
    }
    let vocab = dist.vocab_size();
    let mut total = 0.0;
    for (row, &id) in dist.steps.iter().zip(&target.ids) {
        if id >= vocab {
            return Err(LossError::Shape(format!("target id {id} outside vocabulary of {vocab}")));
        }
        total -= ln(row[id]);
    }
    Ok(total / dist.len() as f64)
}

/// Token-averaged KL(teacher ‖ student).
pub fn sequence_kl(teacher: &DistributionSequence, student: &DistributionSequence) -> Result<f64, LossError> {
    check_same_shape(teacher, student)?;
    let total: f64 = teacher.steps.iter().zip(&student.steps).map(|(p, q)| row_kl(p, q)).sum();
    Ok(total / teacher.len() as f64)
}

fn row_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (ln(*p) - ln(*q))).sum()
}

/// Token-averaged cross-entropy of `dist` under soft targets `reference`.
pub fn sequence_soft_ce(reference: &DistributionSequence, dist: &DistributionSequence) -> Result<f64, LossError> {
    check_same_shape(reference, dist)?;
    let total: f64 = reference
        .steps
        .iter()
        .zip(&dist.steps)
        .map(|(p, q)| p.iter().zip(q).filter(|(p, _)| **p > 0.0).map(|(p, q)| -p * ln(*q)).sum::<f64>())
        .sum();
    Ok(total / reference.len() as f64)
}

/// Token-averaged Shannon entropy.
pub fn sequence_entropy(dist: &DistributionSequence) -> f64 {
    let total: f64 = dist.steps.iter().map(|row| row.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum::<f64>()).sum();
    total / dist.len() as f64
}

fn check_same_shape(a: &DistributionSequence, b: &DistributionSequence) -> Result<(), LossError> {
    if a.len() != b.len() || a.vocab_size() != b.vocab_size() {
        return Err(LossError::Shape(format!(
            "{}x{} vs {}x{}",
            a.len(),
            a.vocab_size(),
            b.len(),
            b.vocab_size()
        )));
    }
    Ok(())
}

/// Combined discoverer objective `ce + alpha * kl`.
pub fn rd_objective(ce: f64, kl: f64, alpha: f64) -> f64 {
    ce + alpha * kl
}

/// Row-wise softmax of `logits / tau`.
pub fn temperature_soften(logits: &[Vec<f64>], tau: f64) -> Result<DistributionSequence, LossError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LossError::Param(format!("temperature must be positive, got {tau}")));
    }
    if logits.iter().flatten().any(|x| x.is_nan()) {
        return Err(LossError::Param("logits contain NaN".into()));
    }
    let steps = logits
        .iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| ((x - max) / tau).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        })
        .collect();
    DistributionSequence::new(steps)
}

/// Re-tempers probabilities: `softmax(log p / tau)`.
pub fn soften_probabilities(dist: &DistributionSequence, tau: f64) -> Result<DistributionSequence, LossError> {
    let logs: Vec<Vec<f64>> = dist.steps.iter().map(|row| row.iter().map(|p| ln(*p)).collect()).collect();
    temperature_soften(&logs, tau)
}

/// Which side of the KL term the temperature applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftenMode {
    #[default]
    Both,
    TeacherOnly,
}

/// KL(teacher ‖ student) after temperature softening, without rescaling.
pub fn softened_kl(teacher_logits: &[Vec<f64>], student_logits: &[Vec<f64>], tau: f64, mode: SoftenMode) -> Result<f64, LossError> {
    let teacher = temperature_soften(teacher_logits, tau)?;
    let student = match mode {
        SoftenMode::Both => temperature_soften(student_logits, tau)?,
        SoftenMode::TeacherOnly => temperature_soften(student_logits, 1.0)?,
    };
    sequence_kl(&teacher, &student)
}

/// Whether dump rows hold probabilities or raw logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Probabilities,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub ce: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    pub total: f64,
}

pub const DUMP_FORMAT: &str = "orex-distribution-dump";
pub const DUMP_VERSION: u32 = 1;

/// One exported batch element.
///
/// `student` rows are the model being trained; `teacher` rows are present
/// when a distillation term applies. CE is taken on the untempered student,
/// KL on tempered rows per `soften`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionDump {
    pub format: String,
    pub version: u32,
    pub rows: RowKind,
    pub targets: TargetTokens,
    pub student: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<Vec<Vec<f64>>>,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default)]
    pub soften: SoftenMode,
    #[serde(default)]
    pub alpha: f64,
    /// Values reported by the exporting training loop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logged: Option<LossValues>,
}

fn one() -> f64 {
    1.0
}

impl DistributionDump {
    pub fn new(rows: RowKind, targets: TargetTokens, student: Vec<Vec<f64>>) -> Self {
        Self {
            format: DUMP_FORMAT.into(),
            version: DUMP_VERSION,
            rows,
            targets,
            student,
            teacher: None,
            tau: 1.0,
            soften: SoftenMode::default(),
            alpha: 0.0,
            logged: None,
        }
    }

    pub fn read(path: &Path) -> Result<Self, LossError> {
        let err = |message: String| LossError::Dump { path: path.display().to_string(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let dump: Self = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if dump.format != DUMP_FORMAT || dump.version != DUMP_VERSION {
            return Err(err(format!("unsupported format {} v{}", dump.format, dump.version)));
        }
        Ok(dump)
    }

    pub fn write(&self, path: &Path) -> Result<(), LossError> {
        let text = serde_json::to_string_pretty(self).expect("dump serializes");
        std::fs::write(path, text + "\n").map_err(|e| LossError::Dump { path: path.display().to_string(), message: e.to_string() })
    }

    fn distributions(&self, rows: &[Vec<f64>], tau: f64) -> Result<DistributionSequence, LossError> {
        match self.rows {
            RowKind::Logits => temperature_soften(rows, tau),
            RowKind::Probabilities => soften_probabilities(&DistributionSequence::new(rows.to_vec())?, tau),
        }
    }

    /// Recomputes CE, KL and the combined objective from the stored rows.
    pub fn recompute(&self) -> Result<LossValues, LossError> {
        let ce = sequence_ce(&self.distributions(&self.student, 1.0)?, &self.targets)?;
        let kl = match &self.teacher {
            None => None,
            Some(teacher) => {
                let student_tau = match self.soften {
                    SoftenMode::Both => self.tau,
                    SoftenMode::TeacherOnly => 1.0,
                };
                let t = self.distributions(teacher, self.tau)?;
                let s = self.distributions(&self.student, student_tau)?;
                Some(sequence_kl(&t, &s)?)
            }
        };
        Ok(LossValues { ce, kl, total: rd_objective(ce, kl.unwrap_or(0.0), self.alpha) })
    }

    /// Largest absolute gap between logged and recomputed values.
    pub fn max_logged_gap(&self) -> Result<Option<f64>, LossError> {
        let Some(logged) = self.logged else { return Ok(None) };
        let fresh = self.recompute()?;
        let kl_gap = match (logged.kl, fresh.kl) {
            (Some(a), Some(b)) => (a - b).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        Ok(Some((logged.ce - fresh.ce).abs().max(kl_gap).max((logged.total - fresh.total).abs())))
    }
}
