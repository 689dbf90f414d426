//! JSON records and the files written next to them.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wmlab_core::attack::AttackRun;
use wmlab_core::stats::RateEstimate;
use wmlab_core::{DetectionResult, TokenSequence};

use crate::config::Experiment;

/// One command's output. `trials` is empty for commands without per-trial rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord<T, S> {
    pub command: String,
    /// SHA-256 of the config file bytes (of the empty string without `--config`).
    pub config_hash: String,
    pub seed: u64,
    pub config: Experiment,
    pub summary: S,
    pub trials: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateTrial {
    pub trial: usize,
    pub key: String,
    /// `None` when the scheme could not produce an output for this key.
    pub output: Option<TokenSequence>,
    pub detection: Option<DetectionResult>,
    pub quality: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub trials: usize,
    pub generation_failures: usize,
    pub detected: Option<RateEstimate>,
    pub mean_statistic: Option<f64>,
    pub mean_quality: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrial {
    pub trial: usize,
    pub key: String,
    pub before: Option<DetectionResult>,
    pub after: Option<DetectionResult>,
    /// Quality of the attacked output does not lose against the original.
    pub non_lose: Option<bool>,
    pub run: Option<AttackRun>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub trials: usize,
    pub generation_failures: usize,
    pub steps: usize,
    pub t_err: usize,
    pub detected_before: Option<RateEstimate>,
    pub detected_after: Option<RateEstimate>,
    pub non_lose: Option<RateEstimate>,
    /// Not aborted, not detected after, and quality non-lose.
    pub success: Option<RateEstimate>,
    pub aborted: usize,
    pub mean_z_before: Option<f64>,
    pub mean_z_after: Option<f64>,
    /// Set when the step budget came from the mixing analysis.
    pub success_bound: Option<f64>,
}

/// Wall-clock time, kept out of the records so they stay byte-reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub command: String,
    pub wall_clock_seconds: f64,
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Writes `rows` under `header`; every row must have the header's width.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timing(dir: &Path, command: &str, seconds: f64) -> Result<PathBuf> {
    let path = dir.join(format!("{command}.timing.json"));
    write_json(
        &path,
        &Timing {
            command: command.to_string(),
            wall_clock_seconds: seconds,
        },
    )?;
    Ok(path)
}

pub fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}
