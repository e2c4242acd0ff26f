//! Hierarchical seed derivation.
//!
//! Every random stream in the crate is keyed by a path from a master seed
//! (experiment → sequence → trajectory/shot). Streams depend only on the
//! path, so serial and parallel execution draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedLineage {
    pub master: u64,
    pub path: Vec<u64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedLineage {
    pub fn new(master: u64) -> Self {
        SeedLineage { master, path: Vec::new() }
    }

    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        SeedLineage { master: self.master, path }
    }

    /// Collapses the lineage into a single 64-bit seed.
    pub fn seed(&self) -> u64 {
        self.path
            .iter()
            .fold(splitmix64(self.master), |acc, &i| splitmix64(acc ^ splitmix64(i.wrapping_add(0x5851_f42d))))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed())
    }
}

impl std::fmt::Display for SeedLineage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.master)?;
        for p in &self.path {
            write!(f, "/{p}")?;
        }
        Ok(())
    }
}
