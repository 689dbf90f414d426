//! Ready-made experiment configurations and the end-to-end check of the
//! attack-success bound on an enumerable output space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{extended_attack, AttackConfig, PerturbationOracle, QualityOracle, StopRule};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::schemes::{KgwParams, KgwScheme, SyntheticParams, SyntheticScheme, WatermarkScheme};
use crate::stats::{binomial_tail, RateEstimate};
use crate::theory::{
    build_quality_graph, quality_percentile, success_lower_bound, SpectralReport, DEFAULT_EIGEN_CAP,
};
use crate::toy_models::{
    MarkovModel, OutputSpace, ReferenceQuality, SpanPerturber, DEFAULT_LOG_FLOOR,
};
use crate::types::{compare_quality, Prompt};

/// Token law of the reference chain in the enumerable setup.
pub const THEOREM_REFERENCE: [f64; 3] = [0.6, 0.3, 0.1];

/// Which proposal chain the enumerable setup's perturber refills from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    /// The reference chain itself.
    Reference,
    /// Uniform over the vocabulary.
    Uniform,
    /// Always token 0: the quality graphs fall apart into unreachable pieces.
    Onehot,
}

/// Parameters of the enumerable setup (uniform generator, i.i.d. reference
/// quality, span perturber, synthetic scheme).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    pub vocab: usize,
    pub length: usize,
    pub eps_pos: f64,
    pub span_length: usize,
    pub top_p: f64,
    pub proposal: ProposalKind,
    pub v: f64,
    pub eps_dist: f64,
    /// Largest acceptable abort probability when choosing `t_err`.
    pub tail_target: f64,
    pub percentile_samples: usize,
    pub eps_pert_samples: usize,
    pub trials: usize,
}

impl Default for TheoremParams {
    fn default() -> Self {
        TheoremParams {
            vocab: 3,
            length: 4,
            eps_pos: 0.1,
            span_length: 1,
            top_p: 0.95,
            proposal: ProposalKind::Reference,
            v: 50.0,
            eps_dist: 0.01,
            tail_target: 1e-3,
            percentile_samples: 10_000,
            eps_pert_samples: 10_000,
            trials: 2000,
        }
    }
}

/// The enumerable setup built from [`TheoremParams`].
#[derive(Debug, Clone)]
pub struct TheoremSetup {
    pub params: TheoremParams,
    pub model: MarkovModel,
    pub quality: ReferenceQuality,
    pub perturber: SpanPerturber,
    pub scheme: SyntheticScheme,
    pub space: OutputSpace,
    pub prompt: Prompt,
}

/// Reference law over `vocab` tokens: the fixed three-token law, or a
/// geometric law `2^-i` (normalized) for other sizes.
fn reference_law(vocab: usize) -> Vec<f64> {
    if vocab == 3 {
        return THEOREM_REFERENCE.to_vec();
    }
    let raw: Vec<f64> = (0..vocab).map(|i| 0.5f64.powi(i as i32)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

impl TheoremSetup {
    pub fn new(params: TheoremParams) -> Result<Self> {
        if params.span_length > params.length {
            return Err(Error::Config(format!(
                "span_length ({}) exceeds length ({})",
                params.span_length, params.length
            )));
        }
        if !(0.0..=100.0).contains(&params.v) {
            return Err(Error::Config(format!("v = {} outside [0, 100]", params.v)));
        }
        if !(params.eps_dist > 0.0 && params.eps_dist <= 1.0) {
            return Err(Error::Config("eps_dist must lie in (0, 1]".into()));
        }
        if !(params.tail_target > 0.0 && params.tail_target < 1.0) {
            return Err(Error::Config("tail_target must lie in (0, 1)".into()));
        }
        let model = MarkovModel::uniform(params.vocab, 1, params.length)?;
        let law = reference_law(params.vocab);
        let reference = MarkovModel::iid(&law, 1, params.length)?;
        // Mean log-probability ranges over [ln min, ln max]; map that onto [0, 1].
        let lo = law.iter().copied().fold(f64::INFINITY, f64::min).ln();
        let hi = law.iter().copied().fold(f64::NEG_INFINITY, f64::max).ln();
        let slope = 1.0 / (hi - lo);
        let quality =
            ReferenceQuality::new(reference.clone(), DEFAULT_LOG_FLOOR, -lo * slope, slope)?;
        let proposal = match params.proposal {
            ProposalKind::Reference => reference,
            ProposalKind::Uniform => MarkovModel::uniform(params.vocab, 1, params.length)?,
            ProposalKind::Onehot => {
                let mut p = vec![0.0; params.vocab];
                p[0] = 1.0;
                MarkovModel::iid(&p, 1, params.length)?
            }
        };
        let perturber = SpanPerturber::new(proposal, params.span_length, params.top_p)?;
        let scheme = SyntheticScheme::new(SyntheticParams {
            target_fp_rate: params.eps_pos,
            rejection_cap: 10_000,
        })?;
        let space = OutputSpace::new(
            model.vocab(),
            params.length,
            crate::toy_models::DEFAULT_ENUMERATION_CAP,
        )?;
        Ok(TheoremSetup {
            params,
            model,
            quality,
            perturber,
            scheme,
            space,
            prompt: Prompt::empty("enumerable"),
        })
    }

    /// Distinct quality values at or above `q_min`, ascending; each is the
    /// floor of one distinct level set.
    pub fn quality_levels(&self, q_min: f64) -> Result<Vec<f64>> {
        let mut levels: Vec<f64> = Vec::new();
        for y in self.space.all() {
            let q = self.quality.quality(&self.prompt, &y)?.value();
            if q >= q_min {
                levels.push(q);
            }
        }
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        Ok(levels)
    }

    /// `min_y Pr[Q(P(y)) >= Q(y) - delta]` over outputs with `Q(y) >= q_min`,
    /// read off the exact kernel.
    pub fn worst_case_preservation(&self, q_min: f64, delta: f64) -> Result<f64> {
        let x = &self.prompt;
        let all = self.space.all();
        let qualities = all
            .iter()
            .map(|y| self.quality.quality(x, y))
            .collect::<Result<Vec<_>>>()?;
        let mut worst = 1.0f64;
        for (i, y) in all.iter().enumerate() {
            if qualities[i].value() < q_min {
                continue;
            }
            let row = self.perturber.kernel_row(x, y, &self.space)?;
            let kept: f64 = row
                .iter()
                .zip(&qualities)
                .filter(|(_, q)| !compare_quality(**q, qualities[i], delta).is_lose())
                .map(|(w, _)| w)
                .sum();
            worst = worst.min(kept);
        }
        Ok(worst)
    }
}

/// Fraction of perturbation calls on watermarked outputs whose result does not
/// lose against the input.
#[allow(clippy::too_many_arguments)]
pub fn measure_preservation<S, Q, P>(
    scheme: &S,
    model: &MarkovModel,
    quality: &Q,
    perturber: &P,
    x: &Prompt,
    delta: f64,
    samples: usize,
    rng: &RngStream,
) -> Result<RateEstimate>
where
    S: WatermarkScheme + ?Sized,
    Q: QualityOracle + Sync + ?Sized,
    P: PerturbationOracle + Sync + ?Sized,
{
    let outcomes = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<Option<bool>> {
            let mut r = rng.trial(i);
            let key = scheme.keygen(&mut r);
            let y = match scheme.generate(model, &key, x, model.length(), &mut r) {
                Ok(y) => y,
                Err(_) => return Ok(None),
            };
            let z = perturber.perturb(x, &y, &mut r)?;
            Ok(Some(
                !compare_quality(quality.quality(x, &z)?, quality.quality(x, &y)?, delta).is_lose(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let kept: Vec<bool> = outcomes.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::InvalidArgument(
            "no watermarked samples could be drawn".into(),
        ));
    }
    let mut est = RateEstimate::from_counts(kept.iter().filter(|&&b| b).count(), kept.len())?;
    est.excluded = samples - kept.len();
    Ok(est)
}

/// Smallest `t_err` with `binomial_tail(t_mix + t_err, t_err, eps) <= target`.
pub fn choose_t_err(t_mix: usize, eps_pert: f64, target: f64) -> Result<usize> {
    if eps_pert <= 0.0 {
        return Err(Error::InvalidArgument(
            "no t_err works when eps_pert = 0".into(),
        ));
    }
    let mut t_err = 0usize;
    loop {
        if binomial_tail((t_mix + t_err) as u64, t_err as u64, eps_pert) <= target {
            return Ok(t_err);
        }
        t_err += 1;
        if t_err > 10_000_000 {
            return Err(Error::NoConvergence {
                what: "t_err search",
                iterations: t_err,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub q: f64,
    pub report: SpectralReport,
}

/// Everything measured by [`validate_theorem`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremValidation {
    pub q_min: f64,
    pub levels: Vec<LevelReport>,
    pub preconditions_hold: bool,
    pub eps_pert_worst: f64,
    pub eps_pert_sampled: RateEstimate,
    pub t_mix: Option<usize>,
    pub t_err: Option<usize>,
    pub t: Option<usize>,
    pub tail: Option<f64>,
    pub bound: Option<f64>,
    pub success: Option<RateEstimate>,
    pub aborted: usize,
    pub generation_failures: usize,
    pub pass: bool,
}

impl TheoremValidation {
    /// Success rate minus the bound, plus the interval half-width; >= 0 on PASS.
    pub fn margin(&self) -> Option<f64> {
        Some(self.success.as_ref()?.point + self.success.as_ref()?.half_width() - self.bound?)
    }
}

/// The pre-attack stages of the check: `q_min`, the level graphs above it,
/// preservation, and the step budget when every level graph mixes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremSchedule {
    pub q_min: f64,
    pub levels: Vec<LevelReport>,
    pub preconditions_hold: bool,
    pub eps_pert_worst: f64,
    pub eps_pert_sampled: RateEstimate,
    pub t_mix: Option<usize>,
    pub t_err: Option<usize>,
}

impl TheoremSchedule {
    pub fn steps(&self) -> Option<usize> {
        Some(self.t_mix? + self.t_err?)
    }
}

pub fn theorem_schedule(setup: &TheoremSetup, rng: &RngStream) -> Result<TheoremSchedule> {
    let p = &setup.params;
    let x = &setup.prompt;
    let q_min = quality_percentile(
        &setup.scheme,
        &setup.model,
        &setup.quality,
        x,
        p.v,
        p.percentile_samples,
        &rng.child("percentile"),
    )?;
    let mut levels = Vec::new();
    for q in setup.quality_levels(q_min)? {
        let graph = build_quality_graph(&setup.space, &setup.perturber, &setup.quality, x, q)?;
        levels.push(LevelReport {
            q,
            report: SpectralReport::analyze(&graph, p.eps_dist, DEFAULT_EIGEN_CAP)?,
        });
    }
    let preconditions_hold = levels
        .iter()
        .all(|l| l.report.irreducible && l.report.aperiodic);
    let eps_pert_worst = setup.worst_case_preservation(q_min, 0.0)?;
    let eps_pert_sampled = measure_preservation(
        &setup.scheme,
        &setup.model,
        &setup.quality,
        &setup.perturber,
        x,
        0.0,
        p.eps_pert_samples,
        &rng.child("eps-pert"),
    )?;
    let (t_mix, t_err) = if preconditions_hold {
        let t_mix = levels
            .iter()
            .filter_map(|l| l.report.mixing_steps())
            .max()
            .expect("at least one level");
        (
            Some(t_mix),
            Some(choose_t_err(t_mix, eps_pert_worst, p.tail_target)?),
        )
    } else {
        (None, None)
    };
    Ok(TheoremSchedule {
        q_min,
        levels,
        preconditions_hold,
        eps_pert_worst,
        eps_pert_sampled,
        t_mix,
        t_err,
    })
}

/// Attack settings for the check: exactly `t` proposals, abort below
/// `t - t_err` accepted, ties counted as losses.
pub fn theorem_attack_config(t: usize, t_err: usize) -> AttackConfig {
    AttackConfig {
        max_steps: t,
        t_err,
        delta: 0.0,
        patience: 1,
        backtracking: false,
        stop_rule: StopRule::FixedSteps,
        oblivious: true,
        record_trace: false,
    }
}

/// Runs the whole check: [`theorem_schedule`], then `trials` extended attacks
/// whose success rate is compared with the bound. Stops after the spectral
/// stage when some level graph is reducible or periodic.
pub fn validate_theorem(setup: &TheoremSetup, rng: &RngStream) -> Result<TheoremValidation> {
    let p = &setup.params;
    let x = &setup.prompt;
    let schedule = theorem_schedule(setup, rng)?;
    let mut out = TheoremValidation {
        q_min: schedule.q_min,
        levels: schedule.levels,
        preconditions_hold: schedule.preconditions_hold,
        eps_pert_worst: schedule.eps_pert_worst,
        eps_pert_sampled: schedule.eps_pert_sampled,
        t_mix: None,
        t_err: None,
        t: None,
        tail: None,
        bound: None,
        success: None,
        aborted: 0,
        generation_failures: 0,
        pass: false,
    };
    let (Some(t_mix), Some(t_err)) = (schedule.t_mix, schedule.t_err) else {
        return Ok(out);
    };
    let eps_pert_worst = out.eps_pert_worst;
    let t = t_mix + t_err;
    let config = theorem_attack_config(t, t_err);
    let attacks = rng.child("attack");
    let run_trial = |i: usize| -> Result<Option<(bool, bool)>> {
        let mut r = attacks.trial(i);
        let key = setup.scheme.keygen(&mut r);
        let y = match setup
            .scheme
            .generate(&setup.model, &key, x, p.length, &mut r)
        {
            Ok(y) => y,
            Err(Error::RejectionCapExhausted(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let run = extended_attack(x, &y, &setup.quality, &setup.perturber, &config, &mut r)?;
        let erased = !setup.scheme.detect(&key, x, &run.output)?.decision;
        let kept_quality = !compare_quality(
            setup.quality.quality(x, &run.output)?,
            setup.quality.quality(x, &y)?,
            0.0,
        )
        .is_lose();
        Ok(Some((!run.aborted && erased && kept_quality, run.aborted)))
    };
    // Keys whose generation fails are replaced by fresh trials, up to twice the budget.
    let mut done: Vec<(bool, bool)> = Vec::with_capacity(p.trials);
    let mut next = 0usize;
    while done.len() < p.trials && next < 2 * p.trials {
        let batch = p.trials - done.len();
        let end = (next + batch).min(2 * p.trials);
        let outcomes = (next..end)
            .into_par_iter()
            .map(run_trial)
            .collect::<Result<Vec<_>>>()?;
        done.extend(outcomes.into_iter().flatten());
        next = end;
    }
    out.generation_failures = next - done.len();
    out.aborted = done.iter().filter(|(_, a)| *a).count();
    let success = RateEstimate::from_counts(done.iter().filter(|(s, _)| *s).count(), done.len())?;
    let tail = binomial_tail(t as u64, t_err as u64, eps_pert_worst);
    let bound = success_lower_bound(
        p.v,
        p.eps_pos,
        p.eps_dist,
        eps_pert_worst,
        t as u64,
        t_err as u64,
    );
    out.pass = success.point >= bound - success.half_width();
    out.t_mix = Some(t_mix);
    out.t_err = Some(t_err);
    out.t = Some(t);
    out.tail = Some(tail);
    out.bound = Some(bound);
    out.success = Some(success);
    Ok(out)
}

/// Parameters of the larger KGW setup: a random order-1 chain, a calibrated
/// reference quality equal to the generator, and a span perturber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgwSetupParams {
    pub vocab: usize,
    pub length: usize,
    pub sharpness: f64,
    pub model_seed: u64,
    pub span_length: usize,
    pub top_p: f64,
    pub calibration_samples: usize,
    pub kgw: KgwParams,
}

impl Default for KgwSetupParams {
    fn default() -> Self {
        KgwSetupParams {
            vocab: 32,
            length: 200,
            sharpness: 2.0,
            model_seed: 7,
            span_length: 6,
            top_p: 0.95,
            calibration_samples: 2000,
            kgw: KgwParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KgwSetup {
    pub params: KgwSetupParams,
    pub model: MarkovModel,
    pub quality: ReferenceQuality,
    pub perturber: SpanPerturber,
    pub scheme: KgwScheme,
    pub prompt: Prompt,
}

impl KgwSetup {
    pub fn new(params: KgwSetupParams) -> Result<Self> {
        if params.span_length > params.length {
            return Err(Error::Config(format!(
                "span_length ({}) exceeds length ({})",
                params.span_length, params.length
            )));
        }
        let rng = RngStream::new(params.model_seed, "kgw-setup");
        let model = MarkovModel::random_order_one(
            params.vocab,
            params.length,
            params.sharpness,
            &mut rng.child("model"),
        )?;
        let prompt = Prompt::empty("kgw");
        let quality = ReferenceQuality::calibrated(
            model.clone(),
            &prompt,
            params.length,
            params.calibration_samples,
            0.75,
            3.0,
            &mut rng.child("calibration"),
        )?;
        let perturber = SpanPerturber::new(model.clone(), params.span_length, params.top_p)?;
        let scheme = KgwScheme::new(params.kgw)?;
        Ok(KgwSetup {
            params,
            model,
            quality,
            perturber,
            scheme,
            prompt,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::theory::is_irreducible;

    #[test]
    fn level_graphs_are_irreducible_and_aperiodic() {
        let s = TheoremSetup::new(TheoremParams::default()).unwrap();
        for q in s.quality_levels(0.0).unwrap() {
            let g = build_quality_graph(&s.space, &s.perturber, &s.quality, &s.prompt, q).unwrap();
            let r = SpectralReport::analyze(&g, 0.01, DEFAULT_EIGEN_CAP).unwrap();
            assert!(r.irreducible && r.aperiodic, "level {q}");
        }
    }

    #[test]
    fn onehot_proposal_breaks_irreducibility() {
        let s = TheoremSetup::new(TheoremParams {
            proposal: ProposalKind::Onehot,
            ..TheoremParams::default()
        })
        .unwrap();
        let g = build_quality_graph(&s.space, &s.perturber, &s.quality, &s.prompt, 0.0).unwrap();
        assert!(!is_irreducible(&g));
    }

    #[test]
    fn worst_case_preservation_of_reference_proposal() {
        let s = TheoremSetup::new(TheoremParams::default()).unwrap();
        // At the all-modal output a single resampled token must come back modal.
        assert!((s.worst_case_preservation(0.0, 0.0).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn quality_spans_unit_interval() {
        let s = TheoremSetup::new(TheoremParams::default()).unwrap();
        let levels = s.quality_levels(0.0).unwrap();
        assert!(levels[0].abs() < 1e-12 && (levels.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn t_err_meets_target() {
        let t_err = choose_t_err(20, 0.6, 1e-3).unwrap();
        assert!(binomial_tail(20 + t_err as u64, t_err as u64, 0.6) <= 1e-3);
        assert!(binomial_tail(20 + t_err as u64 - 1, t_err as u64 - 1, 0.6) > 1e-3);
        assert_eq!(choose_t_err(5, 1.0, 1e-3).unwrap(), 0);
    }

    #[test]
    fn unconstrained_walk_is_random_scan_resampling() {
        // Every proposal clears quality 0, so the walk resamples one of four
        // independent positions per step: eigenvalues 1 - k/4.
        let s = TheoremSetup::new(TheoremParams::default()).unwrap();
        let g = build_quality_graph(&s.space, &s.perturber, &s.quality, &s.prompt, 0.0).unwrap();
        assert_eq!(g.vertices.len(), 81);
        let r = SpectralReport::analyze(&g, 0.01, DEFAULT_EIGEN_CAP).unwrap();
        assert!((r.gap.unwrap() - 0.75).abs() < 1e-9, "{:?}", r.gap);
    }
}
