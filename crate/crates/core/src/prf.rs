//! Keyed pseudorandom function used by every scheme.
//!
//! `derive_subkey(key, context)` is defined bit-exactly as
//!
//! ```text
//! SHA-256( key[0..32] || context )[0..8]  interpreted as a little-endian u64
//! ```
//!
//! The key always occupies exactly 32 bytes, so the prefix construction is
//! unambiguous for any context length.

use sha2::{Digest, Sha256};

use crate::types::SecretKey;

pub fn derive_subkey(key: &SecretKey, context: &[u8]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(key.as_bytes());
    hasher.update(context);
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// Maps a PRF output onto the open unit interval using its top 52 bits:
/// `(floor(word / 2^12) + 1/2) / 2^52`.
pub fn unit_open(word: u64) -> f64 {
    ((word >> 12) as f64 + 0.5) / (1u64 << 52) as f64
}

/// Context builder: a domain tag followed by little-endian `u32` words.
#[derive(Debug, Clone, Default)]
pub struct Context(Vec<u8>);

impl Context {
    pub fn tagged(tag: &str) -> Self {
        let mut bytes = Vec::with_capacity(tag.len() + 16);
        bytes.extend_from_slice(tag.as_bytes());
        Context(bytes)
    }

    pub fn word(mut self, value: u32) -> Self {
        self.0.extend_from_slice(&value.to_le_bytes());
        self
    }

    pub fn words(mut self, values: &[u32]) -> Self {
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        self
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use rand::Rng;

    #[test]
    fn deterministic() {
        let key = SecretKey::from_bytes([7u8; 32]);
        assert_eq!(derive_subkey(&key, b"abc"), derive_subkey(&key, b"abc"));
    }

    #[test]
    fn distinct_contexts_differ() {
        let key = SecretKey::from_bytes([7u8; 32]);
        assert_ne!(derive_subkey(&key, b"abc"), derive_subkey(&key, b"abd"));
        assert_ne!(derive_subkey(&key, b""), derive_subkey(&key, b"\0"));
    }

    #[test]
    fn known_vector() {
        // SHA-256 of 32 zero bytes followed by "wmlab", first 8 bytes LE.
        let key = SecretKey::from_bytes([0u8; 32]);
        let mut h = Sha256::new();
        h.update([0u8; 32]);
        h.update(b"wmlab");
        let d = h.finalize();
        let expect = u64::from_le_bytes(d[..8].try_into().unwrap());
        assert_eq!(derive_subkey(&key, b"wmlab"), expect);
    }

    #[test]
    fn bit_balance_over_contexts() {
        let key = SecretKey::from_bytes([42u8; 32]);
        let n = 100_000u32;
        let mut ones = [0u32; 64];
        for i in 0..n {
            let w = derive_subkey(&key, Context::tagged("bal").word(i).as_bytes());
            for (b, count) in ones.iter_mut().enumerate() {
                *count += ((w >> b) & 1) as u32;
            }
        }
        for count in ones {
            let f = count as f64 / n as f64;
            assert!((f - 0.5).abs() < 0.01, "bit frequency {f}");
        }
    }

    #[test]
    fn purity_over_random_pairs() {
        let mut rng = RngStream::new(1, "prf-purity");
        for _ in 0..10_000 {
            let key = SecretKey::random(&mut rng);
            let len = rng.random_range(0..24);
            let ctx: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            assert_eq!(derive_subkey(&key, &ctx), derive_subkey(&key.clone(), &ctx));
        }
    }

    #[test]
    fn unit_open_stays_inside() {
        assert!(unit_open(0) > 0.0);
        assert!(unit_open(u64::MAX) < 1.0);
    }
}
