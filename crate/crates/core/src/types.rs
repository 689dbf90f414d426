//! Shared domain types.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense token alphabet `0..size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size must be at least 2, got {size}"
            )));
        }
        if size > u32::MAX as usize {
            return Err(Error::InvalidArgument("vocabulary too large".into()));
        }
        Ok(Vocabulary { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn check(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.size) {
            Some(&token) => Err(Error::TokenOutOfRange {
                token,
                size: self.size,
            }),
            None => Ok(()),
        }
    }
}

/// An output `y`: a fixed-alphabet token string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        TokenSequence(tokens)
    }

    /// Builds a sequence and checks it against `vocab`.
    pub fn checked(tokens: Vec<u32>, vocab: Vocabulary) -> Result<Self> {
        vocab.check(&tokens)?;
        Ok(TokenSequence(tokens))
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn tokens_mut(&mut self) -> &mut [u32] {
        &mut self.0
    }

    pub fn into_tokens(self) -> Vec<u32> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of positions where `self` and `other` differ. Lengths must match.
    pub fn hamming(&self, other: &TokenSequence) -> usize {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }

    /// Little-endian u32 serialization used as PRF context.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.0.iter().flat_map(|t| t.to_le_bytes()).collect()
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(tokens: Vec<u32>) -> Self {
        TokenSequence(tokens)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// A prompt `x`; toy models condition on its trailing tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    pub tokens: Vec<u32>,
    pub id: String,
}

impl Prompt {
    pub fn new(id: impl Into<String>, tokens: Vec<u32>) -> Self {
        Prompt {
            tokens,
            id: id.into(),
        }
    }

    pub fn empty(id: impl Into<String>) -> Self {
        Prompt::new(id, Vec::new())
    }
}

pub const KEY_BYTES: usize = 32;

/// Secret key material. Fixed at 32 bytes.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SecretKey([u8; KEY_BYTES]);

impl SecretKey {
    pub fn from_bytes(bytes: [u8; KEY_BYTES]) -> Self {
        SecretKey(bytes)
    }

    pub fn random<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_BYTES];
        rng.fill_bytes(&mut bytes);
        SecretKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_BYTES] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

// Keys never print in full.
impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({:02x}{:02x}..)", self.0[0], self.0[1])
    }
}

/// A quality score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QualityScore(f64);

impl QualityScore {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(QualityScore(value + 0.0))
        } else {
            Err(Error::QualityOutOfRange(value))
        }
    }

    /// Clamps into `[0, 1]`; NaN is rejected.
    pub fn clamped(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(Error::QualityOutOfRange(value));
        }
        Ok(QualityScore(value.clamp(0.0, 1.0) + 0.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QualityScore {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        QualityScore::new(value)
    }
}

impl From<QualityScore> for f64 {
    fn from(q: QualityScore) -> f64 {
        q.0
    }
}

impl Eq for QualityScore {}

impl Ord for QualityScore {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for QualityScore {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Outcome of comparing a candidate's quality against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Win,
    Tie,
    Lose,
}

impl Verdict {
    pub fn is_lose(self) -> bool {
        self == Verdict::Lose
    }

    pub fn flipped(self) -> Self {
        match self {
            Verdict::Win => Verdict::Lose,
            Verdict::Tie => Verdict::Tie,
            Verdict::Lose => Verdict::Win,
        }
    }
}

pub const DEFAULT_TIE_BAND: f64 = 0.02;

/// Three-way comparison with a tie band: a gap of at most `delta` is a tie.
pub fn compare_quality(candidate: QualityScore, reference: QualityScore, delta: f64) -> Verdict {
    debug_assert!(delta >= 0.0);
    let gap = candidate.0 - reference.0;
    if gap > delta {
        Verdict::Win
    } else if -gap > delta {
        Verdict::Lose
    } else {
        Verdict::Tie
    }
}

/// A detector's answer: statistic, optional p-value, and the decision bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub decision: bool,
}

impl DetectionResult {
    pub fn bit(&self) -> u8 {
        self.decision as u8
    }
}
