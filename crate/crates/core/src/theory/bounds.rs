use crate::attack::QualityOracle;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::schemes::WatermarkScheme;
use crate::stats::binomial_tail;
use crate::toy_models::MarkovModel;
use crate::types::Prompt;

const MIN_SAMPLES: usize = 100;

/// Order statistic at index `floor(v / 100 * (n - 1))` of the sorted values.
pub fn percentile(values: &[f64], v: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "percentile of an empty sample".into(),
        ));
    }
    if !(0.0..=100.0).contains(&v) {
        return Err(Error::InvalidArgument(format!(
            "percentile {v} outside [0, 100]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let idx = (v / 100.0 * (sorted.len() - 1) as f64).floor() as usize;
    Ok(sorted[idx])
}

/// `Q(x, y)` over `samples` fresh (key, watermarked output) pairs. Keys whose
/// sampler fails are skipped and redrawn, up to `2 * samples` attempts.
pub fn quality_samples<S, Q>(
    scheme: &S,
    model: &MarkovModel,
    quality: &Q,
    x: &Prompt,
    samples: usize,
    rng: &RngStream,
) -> Result<Vec<f64>>
where
    S: WatermarkScheme + ?Sized,
    Q: QualityOracle + ?Sized,
{
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "quality percentile needs at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    let mut scores = Vec::with_capacity(samples);
    let mut last_err = None;
    for i in 0..2 * samples {
        if scores.len() == samples {
            break;
        }
        let mut r = rng.trial(i);
        let key = scheme.keygen(&mut r);
        match scheme.generate(model, &key, x, model.length(), &mut r) {
            Ok(y) => scores.push(quality.quality(x, &y)?.value()),
            Err(e) => last_err = Some(e),
        }
    }
    if scores.len() < samples {
        return Err(last_err.expect("a failed draw"));
    }
    Ok(scores)
}

/// Empirical `v`-th percentile of [`quality_samples`].
pub fn quality_percentile<S, Q>(
    scheme: &S,
    model: &MarkovModel,
    quality: &Q,
    x: &Prompt,
    v: f64,
    samples: usize,
    rng: &RngStream,
) -> Result<f64>
where
    S: WatermarkScheme + ?Sized,
    Q: QualityOracle + ?Sized,
{
    percentile(
        &quality_samples(scheme, model, quality, x, samples, rng)?,
        v,
    )
}

/// `q_min`: the smallest per-setup percentile.
pub fn q_min(percentiles: &[f64]) -> Result<f64> {
    percentiles
        .iter()
        .copied()
        .min_by(f64::total_cmp)
        .ok_or_else(|| Error::InvalidArgument("q_min over no setups".into()))
}

/// `(1 - v/100)(1 - eps_pos)(1 - eps_dist)(1 - Pr[Bin(t, eps_pert) < t - t_err])`.
pub fn success_lower_bound(
    v: f64,
    eps_pos: f64,
    eps_dist: f64,
    eps_pert: f64,
    t: u64,
    t_err: u64,
) -> f64 {
    (1.0 - v / 100.0)
        * (1.0 - eps_pos)
        * (1.0 - eps_dist)
        * (1.0 - binomial_tail(t, t_err, eps_pert))
}
