//! Clustering and classification metrics against a gold map.
//!
//! Every distinct predicted relation name is one cluster. All partition
//! metrics are computed from a gold-by-predicted contingency table.

use std::collections::HashMap;
use std::hash::Hash;
use std::path::Path;

use indexmap::IndexMap;
use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::domain::{GoldMap, RelationName};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AlignmentError {
    #[error("no prediction for gold instance {0}")]
    MissingPrediction(String),
    #[error("prediction for instance {0} that has no gold label")]
    UnknownInstance(String),
    #[error("nothing to evaluate")]
    Empty,
}

/// Instance id to predicted relation.
pub type PredictionMap = IndexMap<String, RelationName>;

/// Counts of items per (gold class, predicted cluster).
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    counts: Vec<Vec<u64>>,
    gold_sizes: Vec<u64>,
    pred_sizes: Vec<u64>,
    total: u64,
}

impl Contingency {
    /// Builds the table from two aligned label slices. Labels are numbered by
    /// first appearance.
    pub fn from_labels<G: Hash + Eq, P: Hash + Eq>(gold: &[G], pred: &[P]) -> Self {
        assert_eq!(gold.len(), pred.len(), "label slices must be aligned");
        let gold_ids = number(gold);
        let pred_ids = number(pred);
        let rows = gold_ids.iter().max().map_or(0, |m| m + 1);
        let cols = pred_ids.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0u64; cols]; rows];
        for (&g, &p) in gold_ids.iter().zip(&pred_ids) {
            counts[g][p] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Self {
        let cols = counts.first().map_or(0, Vec::len);
        let gold_sizes: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let pred_sizes: Vec<u64> = (0..cols).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
        let total = gold_sizes.iter().sum();
        Self { counts, gold_sizes, pred_sizes, total }
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn gold_classes(&self) -> usize {
        self.gold_sizes.len()
    }

    pub fn pred_clusters(&self) -> usize {
        self.pred_sizes.len()
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .flat_map(|(i, row)| row.iter().enumerate().filter(|(_, n)| **n > 0).map(move |(j, n)| (i, j, *n)))
    }
}

fn number<T: Hash + Eq>(labels: &[T]) -> Vec<usize> {
    let mut seen: HashMap<&T, usize> = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = seen.len();
            *seen.entry(l).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        Self { precision, recall, f1: harmonic(precision, recall) }
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub f1: f64,
}

/// B³ precision and recall averaged over items.
pub fn b_cubed(c: &Contingency) -> Prf {
    if c.total == 0 {
        return Prf::new(0.0, 0.0);
    }
    let (mut p, mut r) = (0.0, 0.0);
    for (i, j, n) in c.cells() {
        let sq = (n * n) as f64;
        p += sq / c.pred_sizes[j] as f64;
        r += sq / c.gold_sizes[i] as f64;
    }
    let n = c.total as f64;
    Prf::new(p / n, r / n)
}

fn entropy(sizes: &[u64], total: u64) -> f64 {
    let n = total as f64;
    sizes.iter().filter(|s| **s > 0).map(|&s| s as f64 / n * (n / s as f64).ln()).sum()
}

/// Homogeneity and completeness from mutual information.
///
/// A side with zero entropy scores 1 on its own measure.
pub fn v_measure(c: &Contingency) -> VMeasure {
    let n = c.total as f64;
    let term = |i: usize, j: usize, cnt: u64| {
        let nij = cnt as f64;
        nij / n * ((n * nij) / (c.gold_sizes[i] as f64 * c.pred_sizes[j] as f64)).ln()
    };
    let mi_rows: f64 = c.cells().map(|(i, j, cnt)| term(i, j, cnt)).sum();
    let mut mi_cols = 0.0;
    for j in 0..c.pred_clusters() {
        for i in 0..c.gold_classes() {
            let cnt = c.counts[i][j];
            if cnt > 0 {
                mi_cols += term(i, j, cnt);
            }
        }
    }
    let h_gold = entropy(&c.gold_sizes, c.total);
    let h_pred = entropy(&c.pred_sizes, c.total);
    let homogeneity = if h_gold == 0.0 { 1.0 } else { (mi_rows / h_gold).clamp(0.0, 1.0) };
    let completeness = if h_pred == 0.0 { 1.0 } else { (mi_cols / h_pred).clamp(0.0, 1.0) };
    VMeasure { homogeneity, completeness, f1: harmonic(homogeneity, completeness) }
}

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index. Two identical trivial partitions score 1.
pub fn ari(c: &Contingency) -> f64 {
    let index: f64 = c.cells().map(|(_, _, n)| pairs(n)).sum();
    let a: f64 = c.gold_sizes.iter().map(|&s| pairs(s)).sum();
    let b: f64 = c.pred_sizes.iter().map(|&s| pairs(s)).sum();
    let all = pairs(c.total);
    if all == 0.0 {
        return 1.0;
    }
    let expected = a * b / all;
    let max = (a + b) / 2.0;
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}

/// One gold class matched to one predicted cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub gold: usize,
    pub pred: usize,
    pub overlap: u64,
}

/// Macro precision, recall and F1 over gold classes under the one-to-one
/// assignment of clusters to classes.
///
/// The assignment maximizes total overlap; ties go to the larger sum of
/// per-class F1, then of per-class precision. Classes left without a cluster
/// score zero, and items of unassigned clusters count as errors.
pub fn aligned_macro_prf(c: &Contingency) -> (Prf, Vec<Match>) {
    let (rows, cols) = (c.gold_classes(), c.pred_clusters());
    if rows == 0 || cols == 0 {
        return (Prf { precision: 0.0, recall: 0.0, f1: 0.0 }, Vec::new());
    }
    let class_scores = |i: usize, j: usize| {
        let o = c.counts[i][j] as f64;
        let p = o / c.pred_sizes[j] as f64;
        let r = o / c.gold_sizes[i] as f64;
        (p, r, harmonic(p, r))
    };

    let m = rows.min(cols) as u64;
    let bits_of = |x: u64| 64 - x.leading_zeros();
    let m_bits = bits_of(m);
    let o_bits = bits_of(c.total);
    let q = ((110 - o_bits - m_bits) / 2).saturating_sub(m_bits).min(40);
    let field = q + m_bits;
    let quantize = |x: f64| (x * (1u64 << q) as f64).round() as i128;
    let weight = |i: usize, j: usize| {
        let (p, _, f1) = class_scores(i, j);
        ((c.counts[i][j] as i128) << (2 * field)) | (quantize(f1) << field) | quantize(p)
    };

    let transpose = rows > cols;
    let (r, k) = if transpose { (cols, rows) } else { (rows, cols) };
    let mut data = Vec::with_capacity(r * k);
    for a in 0..r {
        for b in 0..k {
            data.push(if transpose { weight(b, a) } else { weight(a, b) });
        }
    }
    let matrix = Matrix::from_vec(r, k, data).expect("matrix dimensions match data");
    let (_, assignment) = kuhn_munkres(&matrix);

    let mut matches: Vec<Match> = assignment
        .iter()
        .enumerate()
        .map(|(a, &b)| if transpose { (b, a) } else { (a, b) })
        .filter(|&(i, j)| c.counts[i][j] > 0)
        .map(|(gold, pred)| Match { gold, pred, overlap: c.counts[gold][pred] })
        .collect();
    matches.sort_by_key(|m| m.gold);

    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for m in &matches {
        let (p, r, f1) = class_scores(m.gold, m.pred);
        sp += p;
        sr += r;
        sf += f1;
    }
    let n = rows as f64;
    (Prf { precision: sp / n, recall: sr / n, f1: sf / n }, matches)
}

/// Fraction of items whose attempts contain their gold label.
pub fn pass_at_k<L: PartialEq>(attempts: &[Vec<L>], gold: &[L]) -> f64 {
    assert_eq!(attempts.len(), gold.len(), "label slices must be aligned");
    if gold.is_empty() {
        return 0.0;
    }
    let hits = attempts.iter().zip(gold).filter(|(a, g)| a.contains(g)).count();
    hits as f64 / gold.len() as f64
}

/// Exact-match accuracy.
pub fn accuracy<L: PartialEq>(pred: &[L], gold: &[L]) -> f64 {
    assert_eq!(pred.len(), gold.len(), "label slices must be aligned");
    if gold.is_empty() {
        return 0.0;
    }
    pred.iter().zip(gold).filter(|(p, g)| p == g).count() as f64 / gold.len() as f64
}

/// Pairs predictions with gold labels in gold order.
pub fn align<'a, V>(pred: &'a IndexMap<String, V>, gold: &'a GoldMap) -> Result<(Vec<&'a V>, Vec<&'a RelationName>), AlignmentError> {
    if gold.is_empty() {
        return Err(AlignmentError::Empty);
    }
    if let Some(id) = pred.keys().find(|id| !gold.contains_key(*id)) {
        return Err(AlignmentError::UnknownInstance(id.clone()));
    }
    let mut p = Vec::with_capacity(gold.len());
    for id in gold.keys() {
        p.push(pred.get(id).ok_or_else(|| AlignmentError::MissingPrediction(id.clone()))?);
    }
    Ok((p, gold.values().collect()))
}

/// Pass@K over per-instance discovery attempts.
pub fn pass_at_k_map(attempts: &IndexMap<String, Vec<RelationName>>, gold: &GoldMap) -> Result<f64, AlignmentError> {
    let (a, g) = align(attempts, gold)?;
    let hits = a.iter().zip(&g).filter(|(a, g)| a.contains(g)).count();
    Ok(hits as f64 / g.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedPair {
    pub predicted: RelationName,
    pub gold: RelationName,
    pub overlap: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub instances: usize,
    pub gold_classes: usize,
    pub predicted_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// How predicted names were mapped to gold classes.
    pub alignment: String,
    pub assignment: Vec<AssignedPair>,
}

pub const ALIGNMENT_METHOD: &str =
    "one-to-one assignment maximizing total overlap (ties: per-class F1 sum, then precision sum); unassigned clusters count as errors";

/// Scores laid out as B³, V-measure, ARI, classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub b3: Prf,
    pub v_measure: VMeasure,
    pub ari: f64,
    pub classification: Classification,
    /// Exact name match rate.
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_at_k: Option<PassAtK>,
    pub counts: Counts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassAtK {
    pub k: u32,
    pub value: f64,
}

impl EvalReport {
    /// Flat `key=value` line.
    pub fn summary_line(&self) -> String {
        let mut s = format!(
            "b3_p={:.4} b3_r={:.4} b3_f1={:.4} v_hom={:.4} v_comp={:.4} v_f1={:.4} ari={:.4} cls_p={:.4} cls_r={:.4} cls_f1={:.4} acc={:.4}",
            self.b3.precision,
            self.b3.recall,
            self.b3.f1,
            self.v_measure.homogeneity,
            self.v_measure.completeness,
            self.v_measure.f1,
            self.ari,
            self.classification.precision,
            self.classification.recall,
            self.classification.f1,
            self.accuracy,
        );
        if let Some(p) = self.pass_at_k {
            s.push_str(&format!(" pass_at_{}={:.4}", p.k, p.value));
        }
        s.push_str(&format!(
            " n={} gold={} clusters={}",
            self.counts.instances, self.counts.gold_classes, self.counts.predicted_clusters
        ));
        s
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n")
    }
}

/// Scores final predictions; `attempts` adds Pass@K when given.
pub fn evaluate(
    pred: &PredictionMap,
    gold: &GoldMap,
    attempts: Option<(&IndexMap<String, Vec<RelationName>>, u32)>,
) -> Result<EvalReport, AlignmentError> {
    let (p, g) = align(pred, gold)?;
    let c = Contingency::from_labels(&g, &p);
    let (cls, matches) = aligned_macro_prf(&c);

    let gold_names = first_appearance(&g);
    let pred_names = first_appearance(&p);
    let assignment = matches
        .iter()
        .map(|m| AssignedPair { predicted: pred_names[m.pred].clone(), gold: gold_names[m.gold].clone(), overlap: m.overlap })
        .collect();
    let pass = match attempts {
        Some((a, k)) => Some(PassAtK { k, value: pass_at_k_map(a, gold)? }),
        None => None,
    };
    Ok(EvalReport {
        b3: b_cubed(&c),
        v_measure: v_measure(&c),
        ari: ari(&c),
        classification: Classification {
            precision: cls.precision,
            recall: cls.recall,
            f1: cls.f1,
            alignment: ALIGNMENT_METHOD.into(),
            assignment,
        },
        accuracy: accuracy(&p, &g),
        pass_at_k: pass,
        counts: Counts { instances: g.len(), gold_classes: c.gold_classes(), predicted_clusters: c.pred_clusters() },
    })
}

fn first_appearance<'a>(labels: &[&'a RelationName]) -> Vec<&'a RelationName> {
    let mut out: Vec<&RelationName> = Vec::new();
    for l in labels {
        if !out.contains(l) {
            out.push(l);
        }
    }
    out
}
