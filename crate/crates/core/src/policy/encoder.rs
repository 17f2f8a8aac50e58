use serde::{Deserialize, Serialize};

/// Default number of instruction hash buckets.
pub const DEFAULT_INSTR_DIM: usize = 64;

/// Concatenates the observation vector with a hashed bag of instruction words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub obs_dim: usize,
    pub instr_dim: usize,
}

impl FeatureEncoder {
    pub fn new(obs_dim: usize, instr_dim: usize) -> Self {
        Self { obs_dim, instr_dim }
    }

    pub fn total_dim(&self) -> usize {
        self.obs_dim + self.instr_dim
    }

    pub fn bucket(&self, word: &str) -> usize {
        (fnv1a(word.to_lowercase().as_bytes()) % self.instr_dim as u64) as usize
    }

    /// Features for `(obs, instruction)`; `obs` must have `obs_dim` entries.
    pub fn encode(&self, obs: &[f64], instruction: &str) -> Vec<f64> {
        debug_assert_eq!(obs.len(), self.obs_dim);
        let mut out = Vec::with_capacity(self.total_dim());
        out.extend_from_slice(obs);
        out.resize(self.total_dim(), 0.0);
        if self.instr_dim > 0 {
            for word in instruction.split_whitespace() {
                out[self.obs_dim + self.bucket(word)] += 1.0;
            }
        }
        out
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
