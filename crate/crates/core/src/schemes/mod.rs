//! Secret-key watermarking schemes: a keyed generator plus a deterministic
//! detector for each.

mod exp;
mod green;
mod synthetic;

pub use exp::{exp_alignment_cost, ExpKeySequence, ExpParams, ExpScheme};
pub use green::{
    kgw_green_list, unigram_green_list, GreenList, KgwParams, KgwScheme, UnigramParams,
    UnigramScheme,
};
pub use synthetic::{SyntheticParams, SyntheticScheme};

use crate::error::Result;
use crate::rng::RngStream;
use crate::toy_models::MarkovModel;
use crate::types::{DetectionResult, Prompt, SecretKey, TokenSequence};

/// A detector bound to one key. May memoize key-derived tables between calls;
/// results never depend on call history.
pub trait KeyedDetector {
    fn detect(&mut self, x: &Prompt, y: &TokenSequence) -> Result<DetectionResult>;
}

/// The (Watermark, Detect) pair.
pub trait WatermarkScheme: Send + Sync {
    fn name(&self) -> &'static str;

    fn keygen(&self, rng: &mut RngStream) -> SecretKey {
        SecretKey::random(rng)
    }

    /// One draw from the watermarked model `M_k(x)`.
    fn generate(
        &self,
        model: &MarkovModel,
        key: &SecretKey,
        x: &Prompt,
        length: usize,
        rng: &mut RngStream,
    ) -> Result<TokenSequence>;

    fn detector<'a>(&'a self, key: &SecretKey) -> Box<dyn KeyedDetector + 'a>;

    fn detect(&self, key: &SecretKey, x: &Prompt, y: &TokenSequence) -> Result<DetectionResult> {
        self.detector(key).detect(x, y)
    }

    /// The level the detector is designed to hold under the null, if known.
    fn nominal_false_positive(&self) -> Option<f64>;

    /// `Watermark(M)`: a fresh key and the model it keys.
    fn watermark<'a>(&'a self, model: &'a MarkovModel, rng: &mut RngStream) -> WatermarkedModel<'a>
    where
        Self: Sized,
    {
        WatermarkedModel {
            scheme: self,
            model,
            key: self.keygen(rng),
        }
    }
}

/// `M_k`: a model paired with a scheme and key.
pub struct WatermarkedModel<'a> {
    pub scheme: &'a dyn WatermarkScheme,
    pub model: &'a MarkovModel,
    pub key: SecretKey,
}

impl<'a> WatermarkedModel<'a> {
    pub fn new(
        scheme: &'a dyn WatermarkScheme,
        model: &'a MarkovModel,
        rng: &mut RngStream,
    ) -> Self {
        WatermarkedModel {
            scheme,
            model,
            key: scheme.keygen(rng),
        }
    }

    pub fn sample(&self, x: &Prompt, length: usize, rng: &mut RngStream) -> Result<TokenSequence> {
        self.scheme.generate(self.model, &self.key, x, length, rng)
    }
}
