//! Binomial tails, confidence intervals, test statistics and Monte Carlo rate
//! estimation.
//!
//! Every interval is a two-sided 95% Clopper–Pearson interval: the bounds solve
//! `I_p(s, n - s + 1) = 0.025` and `I_p(s + 1, n - s) = 0.975` for the
//! regularized incomplete beta `I`, with the bound pinned to 0 (resp. 1) at
//! `s = 0` (resp. `s = n`).

mod rates;

pub use rates::{estimate_false_negative, estimate_false_positive, RateEstimate};

use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::beta::inv_beta_reg;
use statrs::function::erf::erfc;
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::toy_models::log_sum_exp;

pub const CONFIDENCE: f64 = 0.95;

/// `Pr[Bin(t, eps) <= t - t_err - 1]`: the chance that fewer than `t - t_err`
/// of `t` independent proposals succeed.
pub fn binomial_tail(t: u64, t_err: u64, eps: f64) -> f64 {
    assert!(t_err <= t, "t_err {t_err} exceeds t {t}");
    assert!((0.0..=1.0).contains(&eps), "eps {eps} outside [0, 1]");
    if t_err == t {
        return 0.0;
    }
    let upper = t - t_err - 1;
    if eps == 0.0 {
        return 1.0;
    }
    if eps == 1.0 {
        return 0.0;
    }
    let (le, lq) = (eps.ln(), (-eps).ln_1p());
    let total =
        log_sum_exp((0..=upper).map(|k| ln_binomial(t, k) + k as f64 * le + (t - k) as f64 * lq));
    total.exp().min(1.0)
}

pub fn normal_upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// `(count - gamma T) / sqrt(T gamma (1 - gamma))`.
pub fn one_proportion_z(count: usize, t: usize, gamma: f64) -> Result<f64> {
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    if count > t || !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need count <= T and gamma in (0, 1); got count {count}, T {t}, gamma {gamma}"
        )));
    }
    let t = t as f64;
    Ok((count as f64 - gamma * t) / (t * gamma * (1.0 - gamma)).sqrt())
}

/// Add-one lower-tail rank p-value: `(1 + #{resample <= observed}) / (1 + resamples)`.
pub fn permutation_p_value<F>(
    observed: f64,
    mut resampler: F,
    resamples: usize,
    rng: &mut RngStream,
) -> f64
where
    F: FnMut(&mut RngStream) -> f64,
{
    let hits = (0..resamples)
        .filter(|_| resampler(rng) <= observed)
        .count();
    (1 + hits) as f64 / (1 + resamples) as f64
}

pub fn binomial_ci(successes: u64, trials: u64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::InvalidArgument(
            "confidence interval needs at least one trial".into(),
        ));
    }
    if successes > trials {
        return Err(Error::InvalidArgument(format!(
            "{successes} successes in {trials} trials"
        )));
    }
    let alpha = 1.0 - CONFIDENCE;
    let (s, n) = (successes as f64, trials as f64);
    let low = if successes == 0 {
        0.0
    } else {
        inv_beta_reg(s, n - s + 1.0, alpha / 2.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        inv_beta_reg(s + 1.0, n - s, 1.0 - alpha / 2.0)
    };
    Ok((low, high))
}

/// Pearson chi-square goodness-of-fit p-value. Cells with zero expected mass
/// must be empty; observing one gives p = 0.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<f64> {
    if counts.len() != probs.len() {
        return Err(Error::InvalidArgument(
            "counts and probabilities differ in length".into(),
        ));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= 0.0 {
            if c > 0 {
                return Ok(0.0);
            }
            continue;
        }
        let e = p * n as f64;
        stat += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    if cells < 2 {
        return Ok(1.0);
    }
    let dist = ChiSquared::new((cells - 1) as f64).expect("positive degrees of freedom");
    Ok(dist.sf(stat))
}
