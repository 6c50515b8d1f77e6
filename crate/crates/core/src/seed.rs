//! Deterministic, splittable random streams.
//!
//! Every random decision in the pipeline draws from a generator derived from
//! the run seed plus a scope path (stage, instance id, attempt, ...). Scopes
//! never share state, so results do not depend on task completion order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for the given scope path.
    pub fn rng(&self, scope: &[&str]) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.digest(scope))
    }

    /// Uniform draw in `[0, 1)` for the given scope path.
    pub fn unit(&self, scope: &[&str]) -> f64 {
        let bytes = self.digest(scope);
        let word = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        (word >> 11) as f64 / (1u64 << 53) as f64
    }

    fn digest(&self, scope: &[&str]) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        for part in scope {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part.as_bytes());
        }
        hasher.finalize().into()
    }
}
