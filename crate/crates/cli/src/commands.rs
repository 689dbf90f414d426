//! The `generate`, `attack`, `theory` and `validate` subcommands.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wmlab_core::attack::{extended_attack, random_walk_attack_monitored, AttackConfig, AttackRun};
use wmlab_core::schemes::WatermarkScheme;
use wmlab_core::setups::{
    theorem_attack_config, theorem_schedule, validate_theorem, TheoremValidation,
};
use wmlab_core::stats::RateEstimate;
use wmlab_core::theory::{
    build_quality_graph, percentile, quality_samples, success_lower_bound, SpectralReport,
};
use wmlab_core::{compare_quality, Error, QualityScore, RngStream, SecretKey, TokenSequence};

use crate::config::{AttackKind, Experiment, Schedule, SchemeKind, SetupKind};
use crate::lab::Lab;
use crate::record::{
    cell, ensure_dir, mean, write_csv, write_json, AttackSummary, AttackTrial, GenerateSummary,
    GenerateTrial, RunRecord,
};

/// Everything a command needs: the resolved config plus command-line overrides.
#[derive(Debug, Clone)]
pub struct Run {
    pub experiment: Experiment,
    pub config_hash: String,
    pub seed: u64,
    pub out: PathBuf,
    pub trials: Option<usize>,
    pub trace: bool,
    pub fixed_key: bool,
}

impl Run {
    pub fn trials(&self, default: usize) -> usize {
        self.trials.unwrap_or(self.experiment.trials_or(default))
    }

    fn record<T, S>(&self, command: &str, summary: S, trials: Vec<T>) -> RunRecord<T, S> {
        let mut config = self.experiment.clone();
        config.seed = self.seed;
        config.out = self.out.clone();
        config.trials = self.trials.or(config.trials);
        RunRecord {
            command: command.to_string(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            config,
            summary,
            trials,
        }
    }

    fn fixed_key(&self, scheme: &dyn WatermarkScheme) -> Option<SecretKey> {
        self.fixed_key
            .then(|| scheme.keygen(&mut RngStream::new(self.seed, "fixed-key")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
}

pub const DEFAULT_TRIALS: usize = 100;

/// Draws the watermarked output for one trial; `Ok(None)` when the scheme's
/// sampler gives up on this key.
fn draw(lab: &Lab, key: &SecretKey, rng: &mut RngStream) -> Result<Option<TokenSequence>> {
    match lab
        .scheme
        .generate(&lab.model, key, &lab.prompt, lab.model.length(), rng)
    {
        Ok(y) => Ok(Some(y)),
        Err(Error::RejectionCapExhausted(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn rate(hits: usize, of: usize) -> Result<Option<RateEstimate>> {
    if of == 0 {
        return Ok(None);
    }
    Ok(Some(RateEstimate::from_counts(hits, of)?))
}

pub fn generate(run: &Run) -> Result<RunRecord<GenerateTrial, GenerateSummary>> {
    let lab = Lab::new(&run.experiment).context("setup")?;
    let n = run.trials(DEFAULT_TRIALS);
    let base = RngStream::new(run.seed, "generate");
    let fixed = run.fixed_key(lab.scheme.as_ref());
    let trials = (0..n)
        .into_par_iter()
        .map(|i| -> Result<GenerateTrial> {
            let mut r = base.trial(i);
            let key = fixed.clone().unwrap_or_else(|| lab.scheme.keygen(&mut r));
            let mut t = GenerateTrial {
                trial: i,
                key: key.to_hex(),
                output: None,
                detection: None,
                quality: None,
                error: None,
            };
            match draw(&lab, &key, &mut r)? {
                Some(y) => {
                    t.detection = Some(lab.scheme.detect(&key, &lab.prompt, &y)?);
                    t.quality = Some(
                        wmlab_core::attack::QualityOracle::quality(&lab.quality, &lab.prompt, &y)?
                            .value(),
                    );
                    t.output = Some(y);
                }
                None => t.error = Some("rejection sampling cap exhausted".into()),
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()
        .context("generate")?;
    let done: Vec<&GenerateTrial> = trials.iter().filter(|t| t.detection.is_some()).collect();
    let summary = GenerateSummary {
        trials: n,
        generation_failures: n - done.len(),
        detected: rate(
            done.iter()
                .filter(|t| t.detection.unwrap().decision)
                .count(),
            done.len(),
        )?,
        mean_statistic: mean(done.iter().map(|t| t.detection.unwrap().statistic)),
        mean_quality: mean(done.iter().filter_map(|t| t.quality)),
    };
    let rows: Vec<Vec<String>> = done
        .iter()
        .map(|t| {
            let d = t.detection.unwrap();
            vec![
                t.trial.to_string(),
                d.statistic.to_string(),
                cell(d.p_value),
                d.bit().to_string(),
                cell(t.quality),
            ]
        })
        .collect();
    let record = run.record("generate", summary, trials);
    ensure_dir(&run.out)?;
    write_json(&run.out.join("generate.json"), &record)?;
    write_csv(
        &run.out.join("generate.csv"),
        &["trial", "z", "p", "decision", "quality"],
        &rows,
    )?;
    Ok(record)
}

/// The attack settings and, in theorem mode, the bound they target.
fn attack_plan(run: &Run, lab: &Lab) -> Result<(AttackConfig, Option<f64>)> {
    let e = &run.experiment;
    if e.schedule == Schedule::Fixed {
        return Ok((e.attack.clone(), None));
    }
    let setup = lab
        .theorem
        .as_ref()
        .expect("theorem schedule needs the enumerable setup");
    let schedule =
        theorem_schedule(setup, &RngStream::new(run.seed, "schedule")).context("schedule")?;
    let (Some(t_mix), Some(t_err)) = (schedule.t_mix, schedule.t_err) else {
        bail!(
            "schedule: some quality-level graph is reducible or periodic, so no step budget exists"
        );
    };
    let t = t_mix + t_err;
    let p = &setup.params;
    let bound = success_lower_bound(
        p.v,
        p.eps_pos,
        p.eps_dist,
        schedule.eps_pert_worst,
        t as u64,
        t_err as u64,
    );
    Ok((theorem_attack_config(t, t_err), Some(bound)))
}

/// Fills in the detector statistic of every traced state (the extended attack
/// does not look at the detector while running).
fn trace_statistics(lab: &Lab, key: &SecretKey, run: &mut AttackRun) -> Result<()> {
    let mut detector = lab.scheme.detector(key);
    let mut current = run.initial.clone();
    let mut z = detector.detect(&lab.prompt, &current)?.statistic;
    for step in &mut run.trace {
        if step.accepted && step.proposal != current {
            current = step.proposal.clone();
            z = detector.detect(&lab.prompt, &current)?.statistic;
        }
        step.z = Some(z);
    }
    Ok(())
}

pub fn attack(run: &Run) -> Result<RunRecord<AttackTrial, AttackSummary>> {
    let e = &run.experiment;
    let lab = Lab::new(e).context("setup")?;
    let (mut config, success_bound) = attack_plan(run, &lab)?;
    config.record_trace = run.trace;
    let n = run.trials(DEFAULT_TRIALS);
    let base = RngStream::new(run.seed, "attack");
    let fixed = run.fixed_key(lab.scheme.as_ref());
    let x = &lab.prompt;
    let trials = (0..n)
        .into_par_iter()
        .map(|i| -> Result<AttackTrial> {
            let mut r = base.trial(i);
            let key = fixed.clone().unwrap_or_else(|| lab.scheme.keygen(&mut r));
            let mut t = AttackTrial {
                trial: i,
                key: key.to_hex(),
                before: None,
                after: None,
                non_lose: None,
                run: None,
                error: None,
            };
            let Some(y) = draw(&lab, &key, &mut r)? else {
                t.error = Some("rejection sampling cap exhausted".into());
                return Ok(t);
            };
            t.before = Some(lab.scheme.detect(&key, x, &y)?);
            let mut attack_run = match e.attack_kind {
                AttackKind::Walk => {
                    let mut detector = lab.scheme.detector(&key);
                    let monitor = !config.oblivious || config.record_trace;
                    random_walk_attack_monitored(
                        x,
                        &y,
                        &lab.quality,
                        &lab.perturber,
                        &config,
                        monitor.then_some(detector.as_mut()),
                        &mut r,
                    )?
                }
                AttackKind::Extended => {
                    let mut run =
                        extended_attack(x, &y, &lab.quality, &lab.perturber, &config, &mut r)?;
                    if config.record_trace {
                        trace_statistics(&lab, &key, &mut run)?;
                    }
                    run
                }
            };
            t.after = Some(lab.scheme.detect(&key, x, &attack_run.output)?);
            t.non_lose = Some(
                !compare_quality(
                    QualityScore::new(attack_run.quality_after)?,
                    QualityScore::new(attack_run.quality_before)?,
                    config.delta,
                )
                .is_lose(),
            );
            if !config.record_trace {
                attack_run.trace.clear();
            }
            t.run = Some(attack_run);
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()
        .context("attack")?;

    let done: Vec<&AttackTrial> = trials.iter().filter(|t| t.run.is_some()).collect();
    let count = |f: &dyn Fn(&AttackTrial) -> bool| done.iter().filter(|t| f(t)).count();
    let summary = AttackSummary {
        trials: n,
        generation_failures: n - done.len(),
        steps: config.max_steps,
        t_err: config.t_err,
        detected_before: rate(count(&|t| t.before.unwrap().decision), done.len())?,
        detected_after: rate(count(&|t| t.after.unwrap().decision), done.len())?,
        non_lose: rate(count(&|t| t.non_lose == Some(true)), done.len())?,
        success: rate(
            count(&|t| {
                !t.run.as_ref().unwrap().aborted
                    && !t.after.unwrap().decision
                    && t.non_lose == Some(true)
            }),
            done.len(),
        )?,
        aborted: count(&|t| t.run.as_ref().unwrap().aborted),
        mean_z_before: mean(done.iter().map(|t| t.before.unwrap().statistic)),
        mean_z_after: mean(done.iter().map(|t| t.after.unwrap().statistic)),
        success_bound,
    };
    let rows: Vec<Vec<String>> = done
        .iter()
        .map(|t| {
            let (b, a, r) = (t.before.unwrap(), t.after.unwrap(), t.run.as_ref().unwrap());
            vec![
                t.trial.to_string(),
                b.statistic.to_string(),
                a.statistic.to_string(),
                cell(b.p_value),
                cell(a.p_value),
                r.quality_before.to_string(),
                r.quality_after.to_string(),
                r.ctr.to_string(),
                (r.aborted as u8).to_string(),
                r.proposals.to_string(),
            ]
        })
        .collect();
    let mut trace_rows = Vec::new();
    if run.trace {
        for t in &done {
            for s in &t.run.as_ref().unwrap().trace {
                trace_rows.push(vec![
                    t.trial.to_string(),
                    s.step.to_string(),
                    (s.accepted as u8).to_string(),
                    s.quality.to_string(),
                    s.replacement_fraction.to_string(),
                    cell(s.z),
                ]);
            }
        }
    }
    let record = run.record("attack", summary, trials);
    ensure_dir(&run.out)?;
    write_json(&run.out.join("attack.json"), &record)?;
    write_csv(
        &run.out.join("attack.csv"),
        &[
            "trial",
            "z_before",
            "z_after",
            "p_before",
            "p_after",
            "quality_before",
            "quality_after",
            "ctr",
            "aborted",
            "steps",
        ],
        &rows,
    )?;
    if run.trace {
        write_csv(
            &run.out.join("trace.csv"),
            &[
                "trial",
                "step",
                "accepted",
                "quality",
                "replacement_fraction",
                "z",
            ],
            &trace_rows,
        )?;
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub q: f64,
    /// Where the level came from: `v=<percentile>`, `q_min`, or `grid`.
    pub sources: Vec<String>,
    /// `None` when no output reaches quality `q`.
    pub report: Option<SpectralReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub outputs: usize,
    pub v: f64,
    pub q_min: f64,
    pub percentiles: Vec<(f64, f64)>,
    pub rows: Vec<TheoryRow>,
}

pub const PERCENTILE_GRID: [f64; 11] = [
    0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0,
];

pub fn theory(run: &Run) -> Result<RunRecord<(), TheorySummary>> {
    let e = &run.experiment;
    let lab = Lab::new(e).context("setup")?;
    let space = match &lab.theorem {
        Some(setup) => setup.space,
        None => lab
            .output_space(e.theory.enumeration_cap)
            .context("enumeration")?,
    };
    let rng = RngStream::new(run.seed, "theory").child("percentile");
    let mut vs: Vec<f64> = PERCENTILE_GRID.to_vec();
    if !vs.contains(&e.theory.v) {
        vs.push(e.theory.v);
        vs.sort_by(f64::total_cmp);
    }
    let scores = quality_samples(
        lab.scheme.as_ref(),
        &lab.model,
        &lab.quality,
        &lab.prompt,
        e.theory.percentile_samples,
        &rng,
    )
    .context("percentile")?;
    let percentiles = vs
        .iter()
        .map(|&v| Ok((v, percentile(&scores, v)?)))
        .collect::<Result<Vec<_>>>()?;
    let q_min = percentiles
        .iter()
        .find(|(v, _)| *v == e.theory.v)
        .map(|(_, q)| *q)
        .expect("v is in the grid");

    let mut levels: Vec<(f64, BTreeSet<String>)> = Vec::new();
    let mut add = |q: f64, source: String| match levels.iter_mut().find(|(l, _)| *l == q) {
        Some((_, s)) => {
            s.insert(source);
        }
        None => levels.push((q, BTreeSet::from([source]))),
    };
    for (v, q) in &percentiles {
        add(*q, format!("v={v}"));
    }
    add(q_min, "q_min".into());
    for q in &e.theory.q_grid {
        add(*q, "grid".into());
    }
    levels.sort_by(|a, b| a.0.total_cmp(&b.0));

    let rows = levels
        .into_par_iter()
        .map(|(q, sources)| -> Result<TheoryRow> {
            let report =
                match build_quality_graph(&space, &lab.perturber, &lab.quality, &lab.prompt, q) {
                    Ok(graph) => Some(SpectralReport::analyze(
                        &graph,
                        e.theory.eps_dist,
                        e.theory.eigen_cap,
                    )?),
                    Err(Error::EmptyQualitySet(_)) => None,
                    Err(err) => return Err(err.into()),
                };
            Ok(TheoryRow {
                q,
                sources: sources.into_iter().collect(),
                report,
            })
        })
        .collect::<Result<Vec<_>>>()
        .context("spectral analysis")?;

    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let r = row.report.as_ref();
            vec![
                row.q.to_string(),
                row.sources.join(";"),
                r.map_or(0, |r| r.n).to_string(),
                (r.is_none() as u8).to_string(),
                cell(r.map(|r| r.irreducible as u8)),
                cell(r.map(|r| r.aperiodic as u8)),
                cell(r.and_then(|r| r.gap)),
                cell(r.and_then(|r| r.pi_min)),
                cell(r.and_then(|r| r.mixing_bound)),
                cell(r.and_then(|r| r.empirical_mixing)),
            ]
        })
        .collect();
    let summary = TheorySummary {
        outputs: space.size(),
        v: e.theory.v,
        q_min,
        percentiles,
        rows,
    };
    let record = run.record("theory", summary, Vec::new());
    ensure_dir(&run.out)?;
    write_json(&run.out.join("theory.json"), &record)?;
    write_csv(
        &run.out.join("theory.csv"),
        &[
            "q",
            "source",
            "n_vertices",
            "empty",
            "irreducible",
            "aperiodic",
            "g",
            "pi_min",
            "bound",
            "empirical_t",
        ],
        &csv_rows,
    )?;
    Ok(record)
}

/// One line per verdict, for the terminal.
pub fn describe_validation(v: &TheoremValidation) -> String {
    if !v.preconditions_hold {
        let bad: Vec<String> = v
            .levels
            .iter()
            .filter(|l| !(l.report.irreducible && l.report.aperiodic))
            .map(|l| {
                let why = if !l.report.irreducible {
                    "reducible"
                } else {
                    "periodic"
                };
                format!("q = {:.4} ({why}, {} outputs)", l.q, l.report.n)
            })
            .collect();
        return format!(
            "FAIL precondition: {} of {} quality-level graphs above q_min = {:.4} are not irreducible and aperiodic: {}",
            bad.len(),
            v.levels.len(),
            v.q_min,
            bad.join(", ")
        );
    }
    let s = v.success.as_ref().expect("success measured");
    format!(
        "{} bound: success {:.4} [{:.4}, {:.4}] over {} runs vs bound {:.4}, margin {:+.4} (q_min {:.4}, eps_pert {:.4}, t_mix {}, t_err {}, t {}, abort tail {:.2e}, aborted {})",
        if v.pass { "PASS" } else { "FAIL" },
        s.point,
        s.ci_low,
        s.ci_high,
        s.trials,
        v.bound.unwrap(),
        v.margin().unwrap(),
        v.q_min,
        v.eps_pert_worst,
        v.t_mix.unwrap(),
        v.t_err.unwrap(),
        v.t.unwrap(),
        v.tail.unwrap(),
        v.aborted
    )
}

pub fn validate(run: &Run) -> Result<(RunRecord<(), TheoremValidation>, Status)> {
    let e = &run.experiment;
    if e.setup != SetupKind::Enumerable {
        bail!("config: validate needs setup = \"enumerable\"");
    }
    if e.scheme.kind() != SchemeKind::Synthetic {
        bail!("config: validate needs scheme = \"synthetic\"");
    }
    let mut params = e.theorem_params().expect("enumerable setup");
    if let Some(n) = run.trials {
        params.trials = n;
    }
    let setup = wmlab_core::setups::TheoremSetup::new(params).context("setup")?;
    let validation =
        validate_theorem(&setup, &RngStream::new(run.seed, "validate")).context("theorem check")?;
    let status = if validation.pass {
        Status::Pass
    } else {
        Status::Fail
    };
    let record = run.record("validate", validation, Vec::new());
    ensure_dir(&run.out)?;
    write_json(&run.out.join("validate.json"), &record)?;
    Ok((record, status))
}
