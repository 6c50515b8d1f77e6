//! Shared workload builders for the benchmarks.

use orex_core::backend::{SimulatedOracle, SimulatedOracleConfig};
use orex_core::data::{split_known_new, synthetic_corpus, Split, SplitSpec};

/// Gold and predicted label vectors of `n` items. Predictions agree with
/// gold except every `noise`-th item, which moves to the next cluster.
pub fn labelings(n: usize, classes: usize, noise: usize) -> (Vec<usize>, Vec<usize>) {
    let gold: Vec<usize> = (0..n).map(|i| (i * 7 + i / 3) % classes).collect();
    let pred = gold
        .iter()
        .enumerate()
        .map(|(i, &g)| if noise > 0 && i % noise == 0 { (g + 1) % classes } else { g })
        .collect();
    (gold, pred)
}

/// `known` training relations and `new` test relations with `per` instances each.
pub fn split(known: usize, new: usize, per: usize) -> Split {
    let corpus = synthetic_corpus("relation", known + new, per, "b");
    split_known_new(&corpus, &SplitSpec::first_known(&corpus, known)).expect("synthetic split is valid")
}

pub fn oracle(split: &Split, seed: u64) -> SimulatedOracle {
    SimulatedOracle::new(SimulatedOracleConfig::new(split.gold.clone(), 0.9, 0.5, seed)).expect("valid oracle")
}
