//! Hash-threshold scheme with an exact false-positive rate.
//!
//! `y` is marked under `key` iff `derive_subkey(key, "synthetic" || y) < target * 2^64`.
//! For a key independent of `y` this happens with probability `target` (up to
//! PRF quality), so detection on unwatermarked text fires at exactly that rate.
//! Generation rejection-samples the model until it hits the marked set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prf::{derive_subkey, Context};
use crate::rng::RngStream;
use crate::toy_models::MarkovModel;
use crate::types::{DetectionResult, Prompt, SecretKey, TokenSequence};

use super::{KeyedDetector, WatermarkScheme};

const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub target_fp_rate: f64,
    pub rejection_cap: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            target_fp_rate: 0.1,
            rejection_cap: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScheme {
    pub params: SyntheticParams,
    threshold: u64,
}

impl SyntheticScheme {
    pub fn new(params: SyntheticParams) -> Result<Self> {
        if !(params.target_fp_rate > 0.0 && params.target_fp_rate < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "target_fp_rate must lie in (0, 1), got {}",
                params.target_fp_rate
            )));
        }
        if params.rejection_cap == 0 {
            return Err(Error::InvalidArgument(
                "rejection_cap must be positive".into(),
            ));
        }
        let threshold = (params.target_fp_rate * TWO_POW_64) as u64;
        Ok(SyntheticScheme { params, threshold })
    }

    pub fn hash(key: &SecretKey, y: &TokenSequence) -> u64 {
        let mut ctx = Context::tagged("synthetic").as_bytes().to_vec();
        ctx.extend(y.to_le_bytes());
        derive_subkey(key, &ctx)
    }

    pub fn is_marked(&self, key: &SecretKey, y: &TokenSequence) -> bool {
        Self::hash(key, y) < self.threshold
    }

    /// Like `generate`, also returning how many draws were rejected.
    pub fn generate_counted(
        &self,
        model: &MarkovModel,
        key: &SecretKey,
        x: &Prompt,
        length: usize,
        rng: &mut RngStream,
    ) -> Result<(TokenSequence, usize)> {
        for rejected in 0..self.params.rejection_cap {
            let y = model.sample(x, length, rng)?;
            if self.is_marked(key, &y) {
                return Ok((y, rejected));
            }
        }
        Err(Error::RejectionCapExhausted(self.params.rejection_cap))
    }
}

struct SyntheticDetector<'a> {
    scheme: &'a SyntheticScheme,
    key: SecretKey,
}

impl KeyedDetector for SyntheticDetector<'_> {
    fn detect(&mut self, _x: &Prompt, y: &TokenSequence) -> Result<DetectionResult> {
        let h = SyntheticScheme::hash(&self.key, y);
        Ok(DetectionResult {
            statistic: h as f64 / TWO_POW_64,
            p_value: None,
            decision: h < self.scheme.threshold,
        })
    }
}

impl WatermarkScheme for SyntheticScheme {
    fn name(&self) -> &'static str {
        "synthetic"
    }

    fn generate(
        &self,
        model: &MarkovModel,
        key: &SecretKey,
        x: &Prompt,
        length: usize,
        rng: &mut RngStream,
    ) -> Result<TokenSequence> {
        self.generate_counted(model, key, x, length, rng)
            .map(|(y, _)| y)
    }

    fn detector<'a>(&'a self, key: &SecretKey) -> Box<dyn KeyedDetector + 'a> {
        Box::new(SyntheticDetector {
            scheme: self,
            key: key.clone(),
        })
    }

    fn nominal_false_positive(&self) -> Option<f64> {
        Some(self.params.target_fp_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::binomial_ci;

    fn setup() -> (SyntheticScheme, MarkovModel, Prompt) {
        (
            SyntheticScheme::new(SyntheticParams::default()).unwrap(),
            MarkovModel::uniform(3, 1, 4).unwrap(),
            Prompt::empty("x"),
        )
    }

    #[test]
    fn emitted_outputs_are_marked() {
        let (s, m, x) = setup();
        let mut rng = RngStream::new(1, "emit");
        for _ in 0..200 {
            let k = SecretKey::random(&mut rng);
            let y = s.generate(&m, &k, &x, 4, &mut rng).unwrap();
            assert!(s.detect(&k, &x, &y).unwrap().decision);
        }
    }

    #[test]
    fn independent_key_false_positive_rate() {
        let (s, m, x) = setup();
        let mut rng = RngStream::new(2, "fp");
        let n = 100_000;
        let mut hits = 0u64;
        for _ in 0..n {
            let k = SecretKey::random(&mut rng);
            let y = m.sample(&x, 4, &mut rng).unwrap();
            hits += s.detect(&k, &x, &y).unwrap().bit() as u64;
        }
        let (lo, hi) = binomial_ci(hits, n).unwrap();
        assert!(lo <= 0.1 && 0.1 <= hi, "{hits} hits, CI [{lo}, {hi}]");
    }

    #[test]
    fn rejections_are_geometric() {
        let (s, m, x) = setup();
        let space = crate::toy_models::OutputSpace::new(m.vocab(), 4, 1000).unwrap();
        let mut rng = RngStream::new(3, "rej");
        // Marked fraction averages to the target over keys.
        let mut fractions = Vec::new();
        for _ in 0..2000 {
            let k = SecretKey::random(&mut rng);
            let marked = space.all().iter().filter(|y| s.is_marked(&k, y)).count();
            fractions.push(marked as f64 / 81.0);
        }
        let mean = fractions.iter().sum::<f64>() / 2000.0;
        assert!((mean - 0.1).abs() < 4.0 * (0.1f64 * 0.9 / 81.0 / 2000.0).sqrt());
        // Per key the draw count is geometric with success rate marked/81.
        for _ in 0..10 {
            let k = SecretKey::random(&mut rng);
            let marked = space.all().iter().filter(|y| s.is_marked(&k, y)).count();
            if marked == 0 {
                continue;
            }
            let p = marked as f64 / 81.0;
            let n = 2000;
            let total: usize = (0..n)
                .map(|_| s.generate_counted(&m, &k, &x, 4, &mut rng).unwrap().1 + 1)
                .sum();
            let mean = total as f64 / n as f64;
            let sd = ((1.0 - p) / (p * p) / n as f64).sqrt();
            assert!(
                (mean - 1.0 / p).abs() < 4.0 * sd,
                "mean {mean} vs {}",
                1.0 / p
            );
        }
    }

    #[test]
    fn thin_marked_set_hits_cap() {
        let s = SyntheticScheme::new(SyntheticParams {
            target_fp_rate: 1e-12,
            rejection_cap: 50,
        })
        .unwrap();
        let m = MarkovModel::uniform(3, 1, 4).unwrap();
        let mut rng = RngStream::new(4, "cap");
        let k = SecretKey::random(&mut rng);
        let err = s
            .generate(&m, &k, &Prompt::empty("x"), 4, &mut rng)
            .unwrap_err();
        assert_eq!(err, Error::RejectionCapExhausted(50));
    }

    #[test]
    fn rejects_bad_rate() {
        for r in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(SyntheticScheme::new(SyntheticParams {
                target_fp_rate: r,
                rejection_cap: 10
            })
            .is_err());
        }
    }
}
