use crate::error::{Error, Result};
use crate::types::{TokenSequence, Vocabulary};

pub const DEFAULT_ENUMERATION_CAP: usize = 100_000;

/// Every sequence of `length` tokens, lexicographically ordered.
pub fn enumerate_outputs(
    vocab: Vocabulary,
    length: usize,
    cap: usize,
) -> Result<Vec<TokenSequence>> {
    Ok(OutputSpace::new(vocab, length, cap)?.all())
}

/// The finite output space `vocab^length`, indexed lexicographically
/// (first token most significant).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputSpace {
    vocab: Vocabulary,
    length: usize,
    size: usize,
}

impl OutputSpace {
    pub fn new(vocab: Vocabulary, length: usize, cap: usize) -> Result<Self> {
        let states = (vocab.size() as u128)
            .checked_pow(length as u32)
            .unwrap_or(u128::MAX);
        if states > cap as u128 {
            return Err(Error::EnumerationCap { states, cap });
        }
        Ok(OutputSpace {
            vocab,
            length,
            size: states as usize,
        })
    }

    pub fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn index_of(&self, y: &TokenSequence) -> usize {
        debug_assert_eq!(y.len(), self.length);
        y.tokens()
            .iter()
            .fold(0usize, |acc, &t| acc * self.vocab.size() + t as usize)
    }

    pub fn sequence(&self, mut index: usize) -> TokenSequence {
        let v = self.vocab.size();
        let mut tokens = vec![0u32; self.length];
        for slot in tokens.iter_mut().rev() {
            *slot = (index % v) as u32;
            index /= v;
        }
        TokenSequence::new(tokens)
    }

    pub fn all(&self) -> Vec<TokenSequence> {
        (0..self.size).map(|i| self.sequence(i)).collect()
    }
}
