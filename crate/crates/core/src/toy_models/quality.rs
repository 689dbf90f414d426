use serde::{Deserialize, Serialize};

use crate::attack::QualityOracle;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::types::{Prompt, QualityScore, TokenSequence};

use super::MarkovModel;

pub const DEFAULT_LOG_FLOOR: f64 = -20.0;

/// Reference quality: mean per-token log-likelihood under a fixed clean chain,
/// mapped affinely and clamped into `[0, 1]`:
///
/// `Q(x, y) = clamp(offset + slope * loglik(x, y) / |y|, 0, 1)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceQuality {
    pub reference: MarkovModel,
    pub floor: f64,
    pub offset: f64,
    pub slope: f64,
}

impl ReferenceQuality {
    pub fn new(reference: MarkovModel, floor: f64, offset: f64, slope: f64) -> Result<Self> {
        if !(floor.is_finite() && floor < 0.0) {
            return Err(Error::InvalidArgument(
                "log floor must be finite and negative".into(),
            ));
        }
        if !offset.is_finite() || !slope.is_finite() || slope < 0.0 {
            return Err(Error::InvalidArgument(
                "affine map must be finite with slope >= 0".into(),
            ));
        }
        Ok(ReferenceQuality {
            reference,
            floor,
            offset,
            slope,
        })
    }

    /// Calibrates the affine map on `samples` draws of length `length` from
    /// the reference chain: the sample mean lands on `center` and
    /// `sigmas_to_top` standard deviations above it land on 1.
    pub fn calibrated(
        reference: MarkovModel,
        prompt: &Prompt,
        length: usize,
        samples: usize,
        center: f64,
        sigmas_to_top: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if samples < 2 {
            return Err(Error::InvalidArgument(
                "calibration needs at least 2 samples".into(),
            ));
        }
        let mut values = Vec::with_capacity(samples);
        for _ in 0..samples {
            let y = reference.sample(prompt, length, rng)?;
            values.push(reference.log_likelihood(prompt, &y, DEFAULT_LOG_FLOOR)? / length as f64);
        }
        let mean = values.iter().sum::<f64>() / samples as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        let sd = var.sqrt();
        let slope = if sd > 1e-12 {
            (1.0 - center) / (sigmas_to_top * sd)
        } else {
            1.0
        };
        ReferenceQuality::new(reference, DEFAULT_LOG_FLOOR, center - slope * mean, slope)
    }

    pub fn mean_log_likelihood(&self, x: &Prompt, y: &TokenSequence) -> Result<f64> {
        Ok(self.reference.log_likelihood(x, y, self.floor)? / y.len() as f64)
    }

    pub fn score(&self, x: &Prompt, y: &TokenSequence) -> Result<QualityScore> {
        let mean = self.mean_log_likelihood(x, y)?;
        QualityScore::clamped(self.offset + self.slope * mean)
    }
}

impl QualityOracle for ReferenceQuality {
    fn quality(&self, x: &Prompt, y: &TokenSequence) -> Result<QualityScore> {
        self.score(x, y)
    }
}
