//! Independent reference implementations shared by integration tests.
#![allow(dead_code)]

/// B³ by walking every item and counting its cluster and class members.
pub fn b_cubed(gold: &[usize], pred: &[usize]) -> (f64, f64) {
    let n = gold.len();
    let (mut p, mut r) = (0.0, 0.0);
    for i in 0..n {
        let cluster = (0..n).filter(|&j| pred[j] == pred[i]).count() as f64;
        let class = (0..n).filter(|&j| gold[j] == gold[i]).count() as f64;
        let both = (0..n).filter(|&j| pred[j] == pred[i] && gold[j] == gold[i]).count() as f64;
        p += both / cluster;
        r += both / class;
    }
    (p / n as f64, r / n as f64)
}

fn distinct(labels: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = labels.to_vec();
    out.sort_unstable();
    out.dedup();
    out
}

fn count(labels: &[usize], l: usize) -> f64 {
    labels.iter().filter(|&&x| x == l).count() as f64
}

fn h(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    -distinct(labels).iter().map(|&l| count(labels, l) / n).map(|p| p * p.ln()).sum::<f64>()
}

/// H(a | b) from joint and marginal frequencies.
fn conditional(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut total = 0.0;
    for &x in &distinct(a) {
        for &y in &distinct(b) {
            let joint = (0..a.len()).filter(|&i| a[i] == x && b[i] == y).count() as f64;
            if joint > 0.0 {
                total -= joint / n * (joint / count(b, y)).ln();
            }
        }
    }
    total
}

/// Homogeneity and completeness as one minus normalized conditional entropy.
pub fn v_measure(gold: &[usize], pred: &[usize]) -> (f64, f64) {
    let hom = if h(gold) == 0.0 { 1.0 } else { 1.0 - conditional(gold, pred) / h(gold) };
    let comp = if h(pred) == 0.0 { 1.0 } else { 1.0 - conditional(pred, gold) / h(pred) };
    (hom, comp)
}

/// ARI by enumerating every unordered pair of items.
pub fn ari(gold: &[usize], pred: &[usize]) -> f64 {
    let n = gold.len();
    let (mut both, mut same_gold, mut same_pred, mut all) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let g = gold[i] == gold[j];
            let p = pred[i] == pred[j];
            all += 1.0;
            same_gold += g as u8 as f64;
            same_pred += p as u8 as f64;
            both += (g && p) as u8 as f64;
        }
    }
    if all == 0.0 {
        return 1.0;
    }
    let expected = same_gold * same_pred / all;
    let max = (same_gold + same_pred) / 2.0;
    if max == expected {
        1.0
    } else {
        (both - expected) / (max - expected)
    }
}

#[derive(Clone, Copy)]
struct Best {
    overlap: u64,
    f1: f64,
    p: f64,
    r: f64,
}

fn better(a: Best, b: Best) -> bool {
    const TOL: f64 = 1e-12;
    if a.overlap != b.overlap {
        return a.overlap > b.overlap;
    }
    if (a.f1 - b.f1).abs() > TOL {
        return a.f1 > b.f1;
    }
    a.p > b.p + TOL
}

/// Macro P/R/F1 maximized exhaustively over every one-to-one partial map
/// from gold classes to clusters, via a DP over used-cluster subsets.
/// Ranking: total overlap, then F1 sum, then precision sum.
pub fn aligned_macro_prf(gold: &[usize], pred: &[usize]) -> (f64, f64, f64) {
    let gs = distinct(gold);
    let ps = distinct(pred);
    assert!(ps.len() <= 16);
    let overlap = |g: usize, p: usize| (0..gold.len()).filter(|&i| gold[i] == g && pred[i] == p).count() as u64;
    let zero = Best { overlap: 0, f1: 0.0, p: 0.0, r: 0.0 };
    let mut dp: Vec<Option<Best>> = vec![None; 1 << ps.len()];
    dp[0] = Some(zero);
    for &g in &gs {
        let mut next: Vec<Option<Best>> = vec![None; 1 << ps.len()];
        #[allow(clippy::needless_range_loop)]
        for mask in 0..dp.len() {
            let Some(cur) = dp[mask] else { continue };
            let mut offer = |m: usize, cand: Best| {
                if next[m].is_none_or(|old| better(cand, old)) {
                    next[m] = Some(cand);
                }
            };
            offer(mask, cur);
            for (k, &p) in ps.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let o = overlap(g, p);
                let prec = o as f64 / count(pred, p);
                let rec = o as f64 / count(gold, g);
                let f1 = if o == 0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
                offer(mask | (1 << k), Best { overlap: cur.overlap + o, f1: cur.f1 + f1, p: cur.p + prec, r: cur.r + rec });
            }
        }
        dp = next;
    }
    let best = dp.into_iter().flatten().fold(zero, |a, b| if better(b, a) { b } else { a });
    let n = gs.len() as f64;
    (best.p / n, best.r / n, best.f1 / n)
}

/// Uniform random partition pair of up to 30 items and 8 labels per side.
pub fn random_partitions(rng: &mut impl rand::Rng) -> (Vec<usize>, Vec<usize>) {
    let n = rng.random_range(1..=30);
    let g = rng.random_range(1..=8);
    let p = rng.random_range(1..=8);
    let gold = (0..n).map(|_| rng.random_range(0..g)).collect();
    let pred = (0..n).map(|_| rng.random_range(0..p)).collect();
    (gold, pred)
}

use orex_core::backend::{SimulatedOracle, SimulatedOracleConfig};
use orex_core::data::{split_known_new, synthetic_corpus, Split, SplitSpec};

/// `known` training relations and `new` test relations, `per` instances each.
pub fn scenario(known: usize, new: usize, per: usize) -> Split {
    let corpus = synthetic_corpus("relation", known + new, per, "s");
    split_known_new(&corpus, &SplitSpec::first_known(&corpus, known)).expect("synthetic split is valid")
}

pub fn oracle(split: &Split, p_target: f64, p_other: f64, seed: u64) -> SimulatedOracle {
    SimulatedOracle::new(SimulatedOracleConfig::new(split.gold.clone(), p_target, p_other, seed)).expect("valid oracle")
}
