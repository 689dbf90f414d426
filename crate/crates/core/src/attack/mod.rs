//! The random-walk erasure attack and its counting variant.
//!
//! The attacker holds a quality oracle and a perturbation oracle, never the
//! watermark key. `random_walk_attack` is the practical loop (tie band,
//! optional backtracking, stop rules). `extended_attack` runs exactly
//! `max_steps` proposals, counts accepted ones in `ctr`, and flags the run as
//! aborted when `ctr < max_steps - t_err`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::schemes::KeyedDetector;
use crate::types::{compare_quality, Prompt, QualityScore, TokenSequence, DEFAULT_TIE_BAND};

/// Deterministic quality function `Q(x, y)`.
pub trait QualityOracle {
    fn quality(&self, x: &Prompt, y: &TokenSequence) -> Result<QualityScore>;
}

/// Randomized perturbation `P(x, y)`.
pub trait PerturbationOracle {
    fn perturb(&self, x: &Prompt, y: &TokenSequence, rng: &mut RngStream) -> Result<TokenSequence>;
}

impl<T: QualityOracle + ?Sized> QualityOracle for &T {
    fn quality(&self, x: &Prompt, y: &TokenSequence) -> Result<QualityScore> {
        (**self).quality(x, y)
    }
}

impl<T: PerturbationOracle + ?Sized> PerturbationOracle for &T {
    fn perturb(&self, x: &Prompt, y: &TokenSequence, rng: &mut RngStream) -> Result<TokenSequence> {
        (**self).perturb(x, y, rng)
    }
}

/// Scores everything the same.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConstantQuality(pub QualityScore);

impl QualityOracle for ConstantQuality {
    fn quality(&self, _: &Prompt, _: &TokenSequence) -> Result<QualityScore> {
        Ok(self.0)
    }
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct IdentityPerturber;

impl PerturbationOracle for IdentityPerturber {
    fn perturb(&self, _: &Prompt, y: &TokenSequence, _: &mut RngStream) -> Result<TokenSequence> {
        Ok(y.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopRule {
    FixedSteps,
    /// Stop once at least `alpha` of the positions differ from the input.
    ReplacementFraction {
        alpha: f64,
    },
    /// Stop once the supplied detector's statistic drops below `threshold`.
    KnownDetectorZ {
        threshold: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub max_steps: usize,
    pub t_err: usize,
    pub delta: f64,
    pub patience: usize,
    pub backtracking: bool,
    pub stop_rule: StopRule,
    /// Forbids any rule that needs detector access.
    pub oblivious: bool,
    pub record_trace: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            max_steps: 200,
            t_err: 50,
            delta: DEFAULT_TIE_BAND,
            patience: 10,
            backtracking: false,
            stop_rule: StopRule::FixedSteps,
            oblivious: true,
            record_trace: false,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_err > self.max_steps {
            return Err(Error::Config(format!(
                "t_err ({}) exceeds max_steps ({})",
                self.t_err, self.max_steps
            )));
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(Error::Config(format!(
                "delta must be >= 0, got {}",
                self.delta
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        match self.stop_rule {
            StopRule::ReplacementFraction { alpha } if !(alpha > 0.0 && alpha <= 1.0) => Err(
                Error::Config(format!("replacement fraction alpha must lie in (0, 1], got {alpha}")),
            ),
            StopRule::KnownDetectorZ { threshold } if !threshold.is_finite() => {
                Err(Error::Config("z stop threshold must be finite".into()))
            }
            StopRule::KnownDetectorZ { .. } if self.oblivious => Err(Error::Config(
                "known_detector_z needs detector access and is not allowed for an oblivious attacker".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// The parts of a run in progress that stop rules look at.
#[derive(Debug, Clone, Copy)]
pub struct Progress<'a> {
    pub initial: &'a TokenSequence,
    pub current: &'a TokenSequence,
    /// Detector statistic of `current`, when a detector is attached.
    pub z: Option<f64>,
}

impl Progress<'_> {
    pub fn replacement_fraction(&self) -> f64 {
        replacement_fraction(self.initial, self.current)
    }
}

pub fn replacement_fraction(initial: &TokenSequence, current: &TokenSequence) -> f64 {
    if initial.is_empty() {
        0.0
    } else {
        initial.hamming(current) as f64 / initial.len() as f64
    }
}

pub fn apply_stop_rule(
    progress: &Progress<'_>,
    rule: &StopRule,
    oblivious: bool,
) -> Result<StopDecision> {
    let stop = match *rule {
        StopRule::FixedSteps => false,
        StopRule::ReplacementFraction { alpha } => progress.replacement_fraction() >= alpha,
        StopRule::KnownDetectorZ { threshold } => {
            if oblivious {
                return Err(Error::Config(
                    "known_detector_z is not allowed for an oblivious attacker".into(),
                ));
            }
            match progress.z {
                Some(z) => z < threshold,
                None => {
                    return Err(Error::Config(
                        "known_detector_z requires an attached detector".into(),
                    ))
                }
            }
        }
    };
    Ok(if stop {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub proposal: TokenSequence,
    pub accepted: bool,
    pub proposal_quality: f64,
    /// Quality of the current output after this step.
    pub quality: f64,
    pub replacement_fraction: f64,
    pub reverted: bool,
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRun {
    pub initial: TokenSequence,
    pub output: TokenSequence,
    /// Accepted proposals.
    pub ctr: usize,
    pub proposals: usize,
    pub aborted: bool,
    pub stopped_early: bool,
    pub backtracks: usize,
    pub quality_before: f64,
    pub quality_after: f64,
    pub trace: Vec<TraceStep>,
}

fn oracle<T>(step: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Oracle {
        step,
        source: Box::new(e),
    })
}

/// Random walk that keeps a proposal whenever its quality does not lose
/// against the ORIGINAL input's quality.
pub fn random_walk_attack<Q, P>(
    x: &Prompt,
    y: &TokenSequence,
    quality: &Q,
    perturber: &P,
    config: &AttackConfig,
    rng: &mut RngStream,
) -> Result<AttackRun>
where
    Q: QualityOracle + ?Sized,
    P: PerturbationOracle + ?Sized,
{
    random_walk_attack_monitored(x, y, quality, perturber, config, None, rng)
}

/// As `random_walk_attack`, with a detector for the `known_detector_z` rule.
pub fn random_walk_attack_monitored<Q, P>(
    x: &Prompt,
    y: &TokenSequence,
    quality: &Q,
    perturber: &P,
    config: &AttackConfig,
    mut detector: Option<&mut dyn KeyedDetector>,
    rng: &mut RngStream,
) -> Result<AttackRun>
where
    Q: QualityOracle + ?Sized,
    P: PerturbationOracle + ?Sized,
{
    config.validate()?;
    if y.is_empty() {
        return Err(Error::EmptySequence);
    }
    let q0 = oracle(0, quality.quality(x, y))?;
    let mut z_of = |step: usize, s: &TokenSequence| -> Result<Option<f64>> {
        match detector.as_deref_mut() {
            Some(d) => Ok(Some(oracle(step, d.detect(x, s))?.statistic)),
            None => Ok(None),
        }
    };

    // history[last] is the current output, with its quality.
    let mut history: Vec<(TokenSequence, QualityScore)> = vec![(y.clone(), q0)];
    let mut z = z_of(0, y)?;
    let mut run = AttackRun {
        initial: y.clone(),
        output: y.clone(),
        ctr: 0,
        proposals: 0,
        aborted: false,
        stopped_early: false,
        backtracks: 0,
        quality_before: q0.value(),
        quality_after: q0.value(),
        trace: Vec::new(),
    };
    let progress = Progress {
        initial: y,
        current: y,
        z,
    };
    if apply_stop_rule(&progress, &config.stop_rule, config.oblivious)? == StopDecision::Stop {
        run.stopped_early = config.max_steps > 0;
        return Ok(run);
    }

    let mut rejected_run = 0usize;
    for step in 1..=config.max_steps {
        let current = &history.last().expect("nonempty").0;
        let proposal = oracle(step, perturber.perturb(x, current, rng))?;
        let qp = oracle(step, quality.quality(x, &proposal))?;
        run.proposals += 1;
        let accepted = !compare_quality(qp, q0, config.delta).is_lose();
        let mut reverted = false;
        let mut changed = false;
        if accepted {
            changed = &proposal != current;
            history.push((proposal.clone(), qp));
            run.ctr += 1;
            rejected_run = 0;
        } else {
            rejected_run += 1;
            if config.backtracking && rejected_run >= config.patience {
                rejected_run = 0;
                if history.len() > 1 {
                    history.pop();
                    run.backtracks += 1;
                    reverted = true;
                    changed = true;
                }
            }
        }
        let (current, current_q) = history.last().expect("nonempty");
        if changed {
            z = z_of(step, current)?;
        }
        let fraction = replacement_fraction(y, current);
        if config.record_trace {
            run.trace.push(TraceStep {
                step,
                proposal,
                accepted,
                proposal_quality: qp.value(),
                quality: current_q.value(),
                replacement_fraction: fraction,
                reverted,
                z,
            });
        }
        let progress = Progress {
            initial: y,
            current,
            z,
        };
        if apply_stop_rule(&progress, &config.stop_rule, config.oblivious)? == StopDecision::Stop {
            run.stopped_early = step < config.max_steps;
            break;
        }
    }
    let (out, q) = history.pop().expect("nonempty");
    run.output = out;
    run.quality_after = q.value();
    Ok(run)
}

/// Exactly `max_steps` proposals, with `ctr` counting those whose quality does
/// not lose against the input's. Aborts when `ctr < max_steps - t_err`; the
/// final state is still reported.
pub fn extended_attack<Q, P>(
    x: &Prompt,
    y: &TokenSequence,
    quality: &Q,
    perturber: &P,
    config: &AttackConfig,
    rng: &mut RngStream,
) -> Result<AttackRun>
where
    Q: QualityOracle + ?Sized,
    P: PerturbationOracle + ?Sized,
{
    config.validate()?;
    if config.stop_rule != StopRule::FixedSteps || config.backtracking {
        return Err(Error::Config(
            "the extended attack runs a fixed number of proposals without backtracking".into(),
        ));
    }
    if y.is_empty() {
        return Err(Error::EmptySequence);
    }
    let q0 = oracle(0, quality.quality(x, y))?;
    let mut current = y.clone();
    let mut current_q = q0;
    let mut run = AttackRun {
        initial: y.clone(),
        output: y.clone(),
        ctr: 0,
        proposals: 0,
        aborted: false,
        stopped_early: false,
        backtracks: 0,
        quality_before: q0.value(),
        quality_after: q0.value(),
        trace: Vec::new(),
    };
    for step in 1..=config.max_steps {
        let proposal = oracle(step, perturber.perturb(x, &current, rng))?;
        let qp = oracle(step, quality.quality(x, &proposal))?;
        run.proposals += 1;
        let accepted = !compare_quality(qp, q0, config.delta).is_lose();
        if accepted {
            run.ctr += 1;
            current = proposal.clone();
            current_q = qp;
        }
        if config.record_trace {
            run.trace.push(TraceStep {
                step,
                proposal,
                accepted,
                proposal_quality: qp.value(),
                quality: current_q.value(),
                replacement_fraction: replacement_fraction(y, &current),
                reverted: false,
                z: None,
            });
        }
    }
    run.aborted = run.ctr < config.max_steps - config.t_err;
    run.output = current;
    run.quality_after = current_q.value();
    Ok(run)
}
