use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binomial_ci;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::schemes::WatermarkScheme;
use crate::toy_models::MarkovModel;
use crate::types::Prompt;

const MIN_TRIALS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub trials: usize,
    /// Trials dropped because generation failed.
    #[serde(default)]
    pub excluded: usize,
}

impl RateEstimate {
    pub fn from_counts(hits: usize, trials: usize) -> Result<Self> {
        let (ci_low, ci_high) = binomial_ci(hits as u64, trials as u64)?;
        Ok(RateEstimate {
            point: hits as f64 / trials as f64,
            ci_low,
            ci_high,
            trials,
            excluded: 0,
        })
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

fn check_trials(n: usize) -> Result<()> {
    if n < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "rate estimation needs at least {MIN_TRIALS} trials, got {n}"
        )));
    }
    Ok(())
}

/// Detection rate on unwatermarked model samples, with a fresh key per trial.
pub fn estimate_false_positive<S: WatermarkScheme + ?Sized>(
    scheme: &S,
    model: &MarkovModel,
    x: &Prompt,
    n_trials: usize,
    rng: &RngStream,
) -> Result<RateEstimate> {
    check_trials(n_trials)?;
    let hits = (0..n_trials)
        .into_par_iter()
        .map(|i| -> Result<usize> {
            let mut r = rng.trial(i);
            let key = scheme.keygen(&mut r);
            let y = model.sample(x, model.length(), &mut r)?;
            Ok(scheme.detect(&key, x, &y)?.bit() as usize)
        })
        .sum::<Result<usize>>()?;
    RateEstimate::from_counts(hits, n_trials)
}

/// Miss rate on watermarked samples. Trials whose generation fails are counted
/// in `excluded` and left out of the rate.
pub fn estimate_false_negative<S: WatermarkScheme + ?Sized>(
    scheme: &S,
    model: &MarkovModel,
    x: &Prompt,
    n_trials: usize,
    rng: &RngStream,
) -> Result<RateEstimate> {
    check_trials(n_trials)?;
    let outcomes = (0..n_trials)
        .into_par_iter()
        .map(|i| -> Result<Option<bool>> {
            let mut r = rng.trial(i);
            let key = scheme.keygen(&mut r);
            match scheme.generate(model, &key, x, model.length(), &mut r) {
                Ok(y) => Ok(Some(!scheme.detect(&key, x, &y)?.decision)),
                Err(_) => Ok(None),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let excluded = outcomes.iter().filter(|o| o.is_none()).count();
    let misses = outcomes.iter().filter(|o| **o == Some(true)).count();
    let kept = n_trials - excluded;
    if kept == 0 {
        return Err(Error::InvalidArgument("every generation failed".into()));
    }
    let mut est = RateEstimate::from_counts(misses, kept)?;
    est.excluded = excluded;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schemes::{KeyedDetector, KgwParams, KgwScheme, SyntheticParams, SyntheticScheme};
    use crate::types::{DetectionResult, SecretKey, TokenSequence};

    struct RejectAll;
    struct Never;

    impl KeyedDetector for Never {
        fn detect(&mut self, _: &Prompt, _: &TokenSequence) -> Result<DetectionResult> {
            Ok(DetectionResult {
                statistic: 0.0,
                p_value: None,
                decision: false,
            })
        }
    }

    impl WatermarkScheme for RejectAll {
        fn name(&self) -> &'static str {
            "reject-all"
        }
        fn generate(
            &self,
            model: &MarkovModel,
            _: &SecretKey,
            x: &Prompt,
            length: usize,
            rng: &mut RngStream,
        ) -> Result<TokenSequence> {
            model.sample(x, length, rng)
        }
        fn detector<'a>(&'a self, _: &SecretKey) -> Box<dyn KeyedDetector + 'a> {
            Box::new(Never)
        }
        fn nominal_false_positive(&self) -> Option<f64> {
            Some(0.0)
        }
    }

    #[test]
    fn reject_all_has_zero_rate() {
        let m = MarkovModel::uniform(3, 1, 4).unwrap();
        let e = estimate_false_positive(
            &RejectAll,
            &m,
            &Prompt::empty("x"),
            1000,
            &RngStream::new(1, "r"),
        )
        .unwrap();
        assert_eq!(e.point, 0.0);
        assert_eq!(e.ci_low, 0.0);
        assert!(e.ci_high < 0.004);
    }

    #[test]
    fn synthetic_rates() {
        let s = SyntheticScheme::new(SyntheticParams::default()).unwrap();
        let m = MarkovModel::uniform(3, 1, 4).unwrap();
        let x = Prompt::empty("x");
        let fp = estimate_false_positive(&s, &m, &x, 20_000, &RngStream::new(2, "fp")).unwrap();
        assert!(fp.ci_low <= 0.1 && 0.1 <= fp.ci_high, "{fp:?}");
        let fn_ = estimate_false_negative(&s, &m, &x, 2_000, &RngStream::new(3, "fn")).unwrap();
        assert_eq!(fn_.point, 0.0);
    }

    #[test]
    fn estimates_are_unbiased_over_replications() {
        let s = SyntheticScheme::new(SyntheticParams::default()).unwrap();
        let m = MarkovModel::uniform(3, 1, 4).unwrap();
        let x = Prompt::empty("x");
        let base = RngStream::new(4, "rep");
        let devs: Vec<f64> = (0..100)
            .map(|i| {
                estimate_false_positive(&s, &m, &x, 1000, &base.trial(i))
                    .unwrap()
                    .point
                    - 0.1
            })
            .collect();
        let mean = devs.iter().sum::<f64>() / 100.0;
        let sd = (0.1f64 * 0.9 / 100_000.0).sqrt();
        assert!(mean.abs() < 4.0 * sd, "mean deviation {mean}");
    }

    #[test]
    fn kgw_without_bias_misses_everything() {
        let s = KgwScheme::new(KgwParams {
            delta: 0.0,
            ..KgwParams::default()
        })
        .unwrap();
        let mut rng = RngStream::new(5, "m");
        let m = MarkovModel::random_order_one(16, 200, 1.0, &mut rng).unwrap();
        let e =
            estimate_false_negative(&s, &m, &Prompt::empty("x"), 1000, &RngStream::new(6, "fn"))
                .unwrap();
        assert!(e.point > 0.99, "{e:?}");
    }

    #[test]
    fn too_few_trials() {
        let m = MarkovModel::uniform(3, 1, 4).unwrap();
        assert!(estimate_false_positive(
            &RejectAll,
            &m,
            &Prompt::empty("x"),
            10,
            &RngStream::new(1, "r")
        )
        .is_err());
    }
}
