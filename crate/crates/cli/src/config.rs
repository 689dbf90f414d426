//! Experiment configuration: a flat TOML table of typed keys.
//!
//! Every key is optional. `setup` picks a family of defaults and the rest
//! override them. Unknown keys, keys that do not apply to the chosen setup or
//! scheme, and inconsistent combinations are rejected at load time with the
//! offending key named in the message.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wmlab_core::attack::{AttackConfig, StopRule};
use wmlab_core::schemes::{ExpParams, KgwParams, SyntheticParams, UnigramParams};
use wmlab_core::setups::{KgwSetupParams, ProposalKind, TheoremParams};
use wmlab_core::theory::DEFAULT_EIGEN_CAP;
use wmlab_core::toy_models::DEFAULT_ENUMERATION_CAP;
use wmlab_core::DEFAULT_TIE_BAND;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupKind {
    /// Random order-1 chain with a calibrated reference quality.
    Chain,
    /// Uniform generator over a tiny vocabulary; every output is enumerable.
    Enumerable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    Kgw,
    Unigram,
    Exp,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Walk,
    Extended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    FixedSteps,
    ReplacementFraction,
    KnownDetectorZ,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Use `steps` and `t_err` as given.
    Fixed,
    /// Derive them from the mixing analysis of the enumerable setup.
    Theorem,
}

/// The file as written. Field names are the config keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub setup: Option<SetupKind>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub out: Option<PathBuf>,

    pub model_file: Option<PathBuf>,
    pub vocab: Option<usize>,
    pub length: Option<usize>,
    pub sharpness: Option<f64>,
    pub model_seed: Option<u64>,

    pub scheme: Option<SchemeKind>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub context_width: Option<usize>,
    pub z_threshold: Option<f64>,
    pub key_sequence_length: Option<usize>,
    pub block_length: Option<usize>,
    pub resamples: Option<usize>,
    pub p_threshold: Option<f64>,
    pub eps_pos: Option<f64>,
    pub rejection_cap: Option<usize>,

    pub span_length: Option<usize>,
    pub top_p: Option<f64>,
    pub proposal: Option<ProposalKind>,
    pub calibration_samples: Option<usize>,

    pub attack: Option<AttackKind>,
    pub schedule: Option<Schedule>,
    pub steps: Option<usize>,
    pub t_err: Option<usize>,
    pub tie_band: Option<f64>,
    pub patience: Option<usize>,
    pub backtracking: Option<bool>,
    pub stop_rule: Option<StopKind>,
    pub stop_alpha: Option<f64>,
    pub stop_z: Option<f64>,
    pub oblivious: Option<bool>,

    pub v: Option<f64>,
    pub eps_dist: Option<f64>,
    pub tail_target: Option<f64>,
    pub percentile_samples: Option<usize>,
    pub eps_pert_samples: Option<usize>,
    pub q_grid: Option<Vec<f64>>,
    pub enumeration_cap: Option<usize>,
    pub eigen_cap: Option<usize>,
}

/// A rejected configuration, naming the key at fault.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "key `{}`: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Scheme parameters after defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SchemeSpec {
    Kgw(KgwParams),
    Unigram(UnigramParams),
    Exp(ExpParams),
    Synthetic(SyntheticParams),
}

impl SchemeSpec {
    pub fn kind(&self) -> SchemeKind {
        match self {
            SchemeSpec::Kgw(_) => SchemeKind::Kgw,
            SchemeSpec::Unigram(_) => SchemeKind::Unigram,
            SchemeSpec::Exp(_) => SchemeKind::Exp,
            SchemeSpec::Synthetic(_) => SchemeKind::Synthetic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Text-format model; `vocab` and `sharpness`/`model_seed` are ignored when set.
    pub file: Option<PathBuf>,
    pub vocab: usize,
    pub length: usize,
    pub sharpness: f64,
    pub model_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySpec {
    pub v: f64,
    pub eps_dist: f64,
    pub tail_target: f64,
    pub percentile_samples: usize,
    pub eps_pert_samples: usize,
    pub q_grid: Vec<f64>,
    pub enumeration_cap: usize,
    pub eigen_cap: usize,
}

/// A fully resolved, validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub setup: SetupKind,
    pub seed: u64,
    pub trials: Option<usize>,
    pub out: PathBuf,
    pub model: ModelSpec,
    pub scheme: SchemeSpec,
    pub span_length: usize,
    pub top_p: f64,
    pub proposal: ProposalKind,
    pub calibration_samples: usize,
    pub attack_kind: AttackKind,
    pub schedule: Schedule,
    pub attack: AttackConfig,
    pub theory: TheorySpec,
}

impl Experiment {
    pub fn trials_or(&self, default: usize) -> usize {
        self.trials.unwrap_or(default)
    }

    /// Parameters of the enumerable setup, when that is the chosen setup.
    pub fn theorem_params(&self) -> Option<TheoremParams> {
        if self.setup != SetupKind::Enumerable {
            return None;
        }
        let eps_pos = match &self.scheme {
            SchemeSpec::Synthetic(p) => p.target_fp_rate,
            _ => SyntheticParams::default().target_fp_rate,
        };
        Some(TheoremParams {
            vocab: self.model.vocab,
            length: self.model.length,
            eps_pos,
            span_length: self.span_length,
            top_p: self.top_p,
            proposal: self.proposal,
            v: self.theory.v,
            eps_dist: self.theory.eps_dist,
            tail_target: self.theory.tail_target,
            percentile_samples: self.theory.percentile_samples,
            eps_pert_samples: self.theory.eps_pert_samples,
            trials: self.trials_or(TheoremParams::default().trials),
        })
    }
}

/// A loaded config: the raw bytes' hash plus the resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub hash: String,
    pub experiment: Experiment,
}

pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses and resolves config text. `base` resolves a relative `model_file`.
pub fn parse_config(text: &str, base: Option<&Path>) -> Result<LoadedConfig, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let key = message
            .strip_prefix("unknown field `")
            .and_then(|rest| rest.split('`').next())
            .unwrap_or("")
            .to_string();
        ConfigError {
            key,
            message: message.lines().next().unwrap_or("").to_string(),
        }
    })?;
    let mut experiment = resolve(&file)?;
    if let (Some(base), Some(path)) = (base, experiment.model.file.as_mut()) {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
    Ok(LoadedConfig {
        hash: config_hash(text.as_bytes()),
        experiment,
    })
}

pub fn load_config(path: &Path) -> anyhow::Result<LoadedConfig> {
    let bytes = std::fs::read(path)
        .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
    let text = String::from_utf8(bytes)
        .map_err(|_| anyhow::anyhow!("config {} is not UTF-8", path.display()))?;
    Ok(parse_config(&text, path.parent())?)
}

/// Keys that only make sense for one setup or one scheme.
fn reject_foreign(
    file: &ConfigFile,
    setup: SetupKind,
    scheme: SchemeKind,
) -> Result<(), ConfigError> {
    let chain_only = [
        ("model_file", file.model_file.is_some()),
        ("sharpness", file.sharpness.is_some()),
        ("model_seed", file.model_seed.is_some()),
        ("calibration_samples", file.calibration_samples.is_some()),
    ];
    if setup == SetupKind::Enumerable {
        if let Some((key, _)) = chain_only.iter().find(|(_, set)| *set) {
            return Err(err(key, "only applies to setup = \"chain\""));
        }
    }
    let per_scheme = [
        (
            "context_width",
            file.context_width.is_some(),
            &[SchemeKind::Kgw][..],
        ),
        (
            "gamma",
            file.gamma.is_some(),
            &[SchemeKind::Kgw, SchemeKind::Unigram][..],
        ),
        (
            "delta",
            file.delta.is_some(),
            &[SchemeKind::Kgw, SchemeKind::Unigram][..],
        ),
        (
            "z_threshold",
            file.z_threshold.is_some(),
            &[SchemeKind::Kgw, SchemeKind::Unigram][..],
        ),
        (
            "key_sequence_length",
            file.key_sequence_length.is_some(),
            &[SchemeKind::Exp][..],
        ),
        (
            "block_length",
            file.block_length.is_some(),
            &[SchemeKind::Exp][..],
        ),
        (
            "resamples",
            file.resamples.is_some(),
            &[SchemeKind::Exp][..],
        ),
        (
            "p_threshold",
            file.p_threshold.is_some(),
            &[SchemeKind::Exp][..],
        ),
        (
            "eps_pos",
            file.eps_pos.is_some(),
            &[SchemeKind::Synthetic][..],
        ),
        (
            "rejection_cap",
            file.rejection_cap.is_some(),
            &[SchemeKind::Synthetic][..],
        ),
    ];
    for (key, set, schemes) in per_scheme {
        if set && !schemes.contains(&scheme) {
            return Err(err(
                key,
                format!("does not apply to scheme = \"{}\"", scheme_name(scheme)),
            ));
        }
    }
    Ok(())
}

pub fn scheme_name(kind: SchemeKind) -> &'static str {
    match kind {
        SchemeKind::Kgw => "kgw",
        SchemeKind::Unigram => "unigram",
        SchemeKind::Exp => "exp",
        SchemeKind::Synthetic => "synthetic",
    }
}

fn unit_interval(
    key: &str,
    value: f64,
    open_low: bool,
    open_high: bool,
) -> Result<(), ConfigError> {
    let low_ok = if open_low { value > 0.0 } else { value >= 0.0 };
    let high_ok = if open_high { value < 1.0 } else { value <= 1.0 };
    if low_ok && high_ok {
        Ok(())
    } else {
        let (l, h) = (
            if open_low { "(" } else { "[" },
            if open_high { ")" } else { "]" },
        );
        Err(err(key, format!("{value} is outside {l}0, 1{h}")))
    }
}

fn positive(key: &str, value: usize) -> Result<(), ConfigError> {
    if value == 0 {
        Err(err(key, "must be at least 1"))
    } else {
        Ok(())
    }
}

pub fn resolve(file: &ConfigFile) -> Result<Experiment, ConfigError> {
    let setup = file.setup.unwrap_or(SetupKind::Chain);
    let scheme_kind = file.scheme.unwrap_or(match setup {
        SetupKind::Chain => SchemeKind::Kgw,
        SetupKind::Enumerable => SchemeKind::Synthetic,
    });
    reject_foreign(file, setup, scheme_kind)?;

    let chain = KgwSetupParams::default();
    let theorem = TheoremParams::default();
    let (vocab, length, span, top_p) = match setup {
        SetupKind::Chain => (chain.vocab, chain.length, chain.span_length, chain.top_p),
        SetupKind::Enumerable => (
            theorem.vocab,
            theorem.length,
            theorem.span_length,
            theorem.top_p,
        ),
    };
    let model = ModelSpec {
        file: file.model_file.clone(),
        vocab: file.vocab.unwrap_or(vocab),
        length: file.length.unwrap_or(length),
        sharpness: file.sharpness.unwrap_or(chain.sharpness),
        model_seed: file.model_seed.unwrap_or(chain.model_seed),
    };
    if model.file.is_some() && file.vocab.is_some() {
        return Err(err("vocab", "is read from model_file; remove one of them"));
    }
    positive("length", model.length)?;
    if model.vocab < 2 {
        return Err(err("vocab", "must be at least 2"));
    }
    if model.sharpness.is_nan() || model.sharpness <= 0.0 {
        return Err(err("sharpness", "must be positive"));
    }

    let scheme = match scheme_kind {
        SchemeKind::Kgw => {
            let d = KgwParams::default();
            SchemeSpec::Kgw(KgwParams {
                gamma: file.gamma.unwrap_or(d.gamma),
                delta: file.delta.unwrap_or(d.delta),
                context_width: file.context_width.unwrap_or(d.context_width),
                z_threshold: file.z_threshold.unwrap_or(d.z_threshold),
            })
        }
        SchemeKind::Unigram => {
            let d = UnigramParams::default();
            SchemeSpec::Unigram(UnigramParams {
                gamma: file.gamma.unwrap_or(d.gamma),
                delta: file.delta.unwrap_or(d.delta),
                z_threshold: file.z_threshold.unwrap_or(d.z_threshold),
            })
        }
        SchemeKind::Exp => {
            let d = ExpParams::default();
            SchemeSpec::Exp(ExpParams {
                key_sequence_length: file.key_sequence_length.unwrap_or(d.key_sequence_length),
                block_length: file.block_length.unwrap_or(d.block_length),
                resamples: file.resamples.unwrap_or(d.resamples),
                p_threshold: file.p_threshold.unwrap_or(d.p_threshold),
            })
        }
        SchemeKind::Synthetic => {
            let d = SyntheticParams::default();
            SchemeSpec::Synthetic(SyntheticParams {
                target_fp_rate: file.eps_pos.unwrap_or(match setup {
                    SetupKind::Chain => d.target_fp_rate,
                    SetupKind::Enumerable => theorem.eps_pos,
                }),
                rejection_cap: file.rejection_cap.unwrap_or(d.rejection_cap),
            })
        }
    };
    match &scheme {
        SchemeSpec::Kgw(p) => {
            unit_interval("gamma", p.gamma, true, true)?;
            if p.delta.is_nan() || p.delta < 0.0 {
                return Err(err("delta", "must be >= 0"));
            }
            positive("context_width", p.context_width)?;
        }
        SchemeSpec::Unigram(p) => {
            unit_interval("gamma", p.gamma, true, true)?;
            if p.delta.is_nan() || p.delta < 0.0 {
                return Err(err("delta", "must be >= 0"));
            }
        }
        SchemeSpec::Exp(p) => {
            positive("block_length", p.block_length)?;
            positive("resamples", p.resamples)?;
            unit_interval("p_threshold", p.p_threshold, true, true)?;
            if p.key_sequence_length < model.length {
                return Err(err(
                    "key_sequence_length",
                    format!(
                        "{} is shorter than length ({})",
                        p.key_sequence_length, model.length
                    ),
                ));
            }
            if p.block_length > model.length {
                return Err(err(
                    "block_length",
                    format!("{} exceeds length ({})", p.block_length, model.length),
                ));
            }
        }
        SchemeSpec::Synthetic(p) => {
            unit_interval("eps_pos", p.target_fp_rate, true, true)?;
            positive("rejection_cap", p.rejection_cap)?;
        }
    }

    let span_length = file.span_length.unwrap_or(span.min(model.length));
    positive("span_length", span_length)?;
    if span_length > model.length {
        return Err(err(
            "span_length",
            format!("{span_length} exceeds length ({})", model.length),
        ));
    }
    let top_p = file.top_p.unwrap_or(top_p);
    unit_interval("top_p", top_p, true, false)?;
    let calibration_samples = file
        .calibration_samples
        .unwrap_or(chain.calibration_samples);
    if calibration_samples < 2 {
        return Err(err("calibration_samples", "must be at least 2"));
    }

    let attack_kind = file.attack.unwrap_or(match setup {
        SetupKind::Chain => AttackKind::Walk,
        SetupKind::Enumerable => AttackKind::Extended,
    });
    let schedule = file.schedule.unwrap_or(match setup {
        SetupKind::Chain => Schedule::Fixed,
        SetupKind::Enumerable => Schedule::Theorem,
    });
    if schedule == Schedule::Theorem {
        if setup != SetupKind::Enumerable {
            return Err(err("schedule", "\"theorem\" needs setup = \"enumerable\""));
        }
        if file.steps.is_some() || file.t_err.is_some() {
            let key = if file.steps.is_some() {
                "steps"
            } else {
                "t_err"
            };
            return Err(err(key, "is derived when schedule = \"theorem\""));
        }
        if attack_kind != AttackKind::Extended {
            return Err(err(
                "attack",
                "schedule = \"theorem\" runs the extended attack",
            ));
        }
    }
    let stop_kind = file.stop_rule.unwrap_or(StopKind::FixedSteps);
    if file.stop_alpha.is_some() && stop_kind != StopKind::ReplacementFraction {
        return Err(err(
            "stop_alpha",
            "only applies to stop_rule = \"replacement_fraction\"",
        ));
    }
    if file.stop_z.is_some() && stop_kind != StopKind::KnownDetectorZ {
        return Err(err(
            "stop_z",
            "only applies to stop_rule = \"known_detector_z\"",
        ));
    }
    let stop_rule = match stop_kind {
        StopKind::FixedSteps => StopRule::FixedSteps,
        StopKind::ReplacementFraction => {
            let alpha = file.stop_alpha.unwrap_or(0.5);
            unit_interval("stop_alpha", alpha, true, false)?;
            StopRule::ReplacementFraction { alpha }
        }
        StopKind::KnownDetectorZ => StopRule::KnownDetectorZ {
            threshold: file.stop_z.unwrap_or(1.645),
        },
    };
    let oblivious = file
        .oblivious
        .unwrap_or(stop_kind != StopKind::KnownDetectorZ);
    if oblivious && stop_kind == StopKind::KnownDetectorZ {
        return Err(err(
            "oblivious",
            "stop_rule = \"known_detector_z\" needs oblivious = false",
        ));
    }
    let defaults = AttackConfig::default();
    let attack = AttackConfig {
        max_steps: file.steps.unwrap_or(defaults.max_steps),
        t_err: file.t_err.unwrap_or(0),
        delta: file.tie_band.unwrap_or(match attack_kind {
            AttackKind::Walk => DEFAULT_TIE_BAND,
            AttackKind::Extended => 0.0,
        }),
        patience: file.patience.unwrap_or(defaults.patience),
        backtracking: file.backtracking.unwrap_or(attack_kind == AttackKind::Walk),
        stop_rule,
        oblivious,
        record_trace: false,
    };
    if attack.t_err > attack.max_steps {
        return Err(err(
            "t_err",
            format!("{} exceeds steps ({})", attack.t_err, attack.max_steps),
        ));
    }
    if !(0.0..=1.0).contains(&attack.delta) {
        return Err(err(
            "tie_band",
            format!("{} is outside [0, 1]", attack.delta),
        ));
    }
    positive("patience", attack.patience)?;
    if attack_kind == AttackKind::Extended {
        if attack.backtracking {
            return Err(err("backtracking", "the extended attack never backtracks"));
        }
        if stop_kind != StopKind::FixedSteps {
            return Err(err(
                "stop_rule",
                "the extended attack runs a fixed number of steps",
            ));
        }
    }

    let theory = TheorySpec {
        v: file.v.unwrap_or(theorem.v),
        eps_dist: file.eps_dist.unwrap_or(theorem.eps_dist),
        tail_target: file.tail_target.unwrap_or(theorem.tail_target),
        percentile_samples: file
            .percentile_samples
            .unwrap_or(theorem.percentile_samples),
        eps_pert_samples: file.eps_pert_samples.unwrap_or(theorem.eps_pert_samples),
        q_grid: file.q_grid.clone().unwrap_or_default(),
        enumeration_cap: file.enumeration_cap.unwrap_or(DEFAULT_ENUMERATION_CAP),
        eigen_cap: file.eigen_cap.unwrap_or(DEFAULT_EIGEN_CAP),
    };
    if !(0.0..=100.0).contains(&theory.v) {
        return Err(err("v", format!("{} is outside [0, 100]", theory.v)));
    }
    unit_interval("eps_dist", theory.eps_dist, true, false)?;
    unit_interval("tail_target", theory.tail_target, true, true)?;
    if theory.percentile_samples < 100 {
        return Err(err("percentile_samples", "must be at least 100"));
    }
    positive("eps_pert_samples", theory.eps_pert_samples)?;
    if let Some(q) = theory.q_grid.iter().find(|q| !q.is_finite()) {
        return Err(err("q_grid", format!("{q} is not a finite quality level")));
    }
    if let Some(trials) = file.trials {
        positive("trials", trials)?;
    }

    Ok(Experiment {
        setup,
        seed: file.seed.unwrap_or(0),
        trials: file.trials,
        out: file.out.clone().unwrap_or_else(|| PathBuf::from("out")),
        model,
        scheme,
        span_length,
        top_p,
        proposal: file.proposal.unwrap_or(ProposalKind::Reference),
        calibration_samples,
        attack_kind,
        schedule,
        attack,
        theory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_chain_defaults() {
        let c = parse_config("", None).unwrap();
        let e = c.experiment;
        assert_eq!(e.setup, SetupKind::Chain);
        assert_eq!(e.scheme, SchemeSpec::Kgw(KgwParams::default()));
        assert_eq!((e.model.vocab, e.model.length, e.span_length), (32, 200, 6));
        assert_eq!(e.attack_kind, AttackKind::Walk);
        assert!(e.attack.backtracking);
        assert_eq!(c.hash, config_hash(b""));
    }

    #[test]
    fn enumerable_defaults_match_the_theorem_setup() {
        let e = parse_config("setup = \"enumerable\"", None)
            .unwrap()
            .experiment;
        assert_eq!(e.theorem_params().unwrap(), TheoremParams::default());
        assert_eq!(e.schedule, Schedule::Theorem);
        assert_eq!(e.attack.delta, 0.0);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = parse_config("spanlength = 3", None).unwrap_err();
        assert_eq!(e.key, "spanlength");
        assert!(e.to_string().contains("unknown field"));
    }

    #[test]
    fn wrong_types_are_rejected() {
        assert!(parse_config("steps = \"many\"", None).is_err());
        assert!(parse_config("scheme = \"gumbel\"", None).is_err());
    }

    #[test]
    fn cross_field_errors_name_the_key() {
        let cases = [
            ("length = 4\nspan_length = 5", "span_length"),
            ("steps = 10\nt_err = 11", "t_err"),
            ("gamma = 1.5", "gamma"),
            ("top_p = 0", "top_p"),
            ("eps_pos = 0.2", "eps_pos"),
            ("setup = \"enumerable\"\nsharpness = 3", "sharpness"),
            ("schedule = \"theorem\"", "schedule"),
            ("setup = \"enumerable\"\nsteps = 10", "steps"),
            (
                "stop_rule = \"known_detector_z\"\noblivious = true",
                "oblivious",
            ),
            ("stop_z = 2.0", "stop_z"),
            ("attack = \"extended\"\nbacktracking = true", "backtracking"),
            (
                "attack = \"extended\"\nbacktracking = false\nstop_rule = \"known_detector_z\"",
                "stop_rule",
            ),
            (
                "scheme = \"exp\"\nkey_sequence_length = 10",
                "key_sequence_length",
            ),
            ("v = 120", "v"),
            ("trials = 0", "trials"),
        ];
        for (text, key) in cases {
            let e = parse_config(text, None).unwrap_err();
            assert_eq!(e.key, key, "{text}: {e}");
        }
    }

    #[test]
    fn hash_is_over_the_exact_bytes() {
        let a = parse_config("seed = 1\n", None).unwrap();
        let b = parse_config("seed = 1 \n", None).unwrap();
        assert_eq!(a.experiment, b.experiment);
        assert_ne!(a.hash, b.hash);
        assert_eq!(
            config_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn z_stop_defaults_to_monitored() {
        let e = parse_config("stop_rule = \"known_detector_z\"", None)
            .unwrap()
            .experiment;
        assert!(!e.attack.oblivious);
        assert_eq!(
            e.attack.stop_rule,
            StopRule::KnownDetectorZ { threshold: 1.645 }
        );
    }

    #[test]
    fn relative_model_file_is_resolved_against_the_config() {
        let e = parse_config("model_file = \"m.txt\"", Some(Path::new("/tmp/cfg")))
            .unwrap()
            .experiment;
        assert_eq!(e.model.file.unwrap(), PathBuf::from("/tmp/cfg/m.txt"));
    }
}
