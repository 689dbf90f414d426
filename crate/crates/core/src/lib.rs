//! Secret-key watermarking on toy Markov models, the random-walk erasure
//! attack, and the Markov-chain machinery that bounds its success.
//!
//! Layout:
//!
//! - [`types`], [`prf`], [`rng`]: shared values, keyed pseudorandomness, labeled streams.
//! - [`toy_models`]: generators, the reference quality function, the span perturber.
//! - [`schemes`]: KGW, Unigram, EXP and a synthetic exact-rate scheme.
//! - [`attack`]: the random walk and its counting variant.
//! - [`theory`]: quality graphs, stationary laws, spectral gaps, mixing times.
//! - [`stats`]: binomial tails, intervals, rate estimation.
//! - [`setups`]: ready-made experiment configurations.

pub mod attack;
pub mod error;
pub mod prf;
pub mod rng;
pub mod schemes;
pub mod setups;
pub mod stats;
pub mod theory;
pub mod toy_models;
pub mod types;

pub use error::{Error, Result};
pub use prf::{derive_subkey, unit_open, Context};
pub use rng::RngStream;
pub use types::{
    compare_quality, DetectionResult, Prompt, QualityScore, SecretKey, TokenSequence, Verdict,
    Vocabulary, DEFAULT_TIE_BAND, KEY_BYTES,
};
