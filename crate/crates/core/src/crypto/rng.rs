use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

use super::SymmetricKey;

/// The single randomness source of a simulation. Every random value in a
/// run is drawn from one of these, so a seed fully determines the run.
#[derive(Debug, Clone)]
pub struct SimRng(ChaCha20Rng);

impl SimRng {
    pub fn from_seed(seed: u64) -> Self {
        SimRng(ChaCha20Rng::seed_from_u64(seed))
    }

    /// Independent child stream, so adding draws in one subsystem does not
    /// shift values in another.
    pub fn fork(&mut self, stream: u64) -> Self {
        let mut seed = [0u8; 32];
        self.0.fill_bytes(&mut seed);
        let mut child = ChaCha20Rng::from_seed(seed);
        child.set_stream(stream);
        SimRng(child)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        self.next_u64() % bound
    }

    pub fn coin(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }

    pub fn array<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        self.0.fill_bytes(&mut out);
        out
    }

    pub fn bytes(&mut self, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        self.0.fill_bytes(&mut out);
        out
    }

    pub fn key(&mut self, label: &str) -> SymmetricKey {
        SymmetricKey::new(self.array(), label)
    }
}
