//! Labeled, reproducible random streams.
//!
//! A stream is ChaCha8 seeded with `SHA-256(master_seed as u64 LE || label)`.
//! Child streams extend the label with `/child`, so a whole experiment is
//! reproducible from one master seed regardless of scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct RngStream {
    master_seed: u64,
    label: String,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, label: impl Into<String>) -> Self {
        let label = label.into();
        let mut hasher = Sha256::new();
        hasher.update(master_seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        RngStream {
            master_seed,
            label,
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Independent stream derived from this one's seed and label. Does not
    /// consume randomness from `self`.
    pub fn child(&self, name: impl AsRef<str>) -> Self {
        RngStream::new(
            self.master_seed,
            format!("{}/{}", self.label, name.as_ref()),
        )
    }

    /// Per-trial stream: `label/trial-<index>`.
    pub fn trial(&self, index: usize) -> Self {
        self.child(format!("trial-{index}"))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
}
