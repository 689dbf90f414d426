//! Tidy plot data from traced attack records.
//!
//! * `plot_long.csv`: `trial,step,metric,value` with metrics `z` and `quality`.
//! * `plot_step_means.csv`: `step,metric,mean,n`, averaged over trials.
//! * `plot_histograms.csv`: `metric,bin,low,high,count` for the per-trial
//!   `z_before`, `z_after`, `quality_before` and `quality_after`.
//!
//! Trial numbers of later records are offset past those of earlier ones so
//! they stay distinct.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

use crate::record::{ensure_dir, read_json, write_csv, AttackSummary, AttackTrial, RunRecord};

pub type AttackRecord = RunRecord<AttackTrial, AttackSummary>;

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LongRow {
    pub trial: usize,
    pub step: usize,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMean {
    pub step: usize,
    pub metric: &'static str,
    pub mean: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub metric: &'static str,
    pub bin: usize,
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

pub fn load_records(paths: &[PathBuf]) -> Result<Vec<(PathBuf, AttackRecord)>> {
    paths
        .iter()
        .map(|p| -> Result<_> {
            let r: AttackRecord = read_json(p)?;
            if r.command != "attack" {
                bail!(
                    "{} is a `{}` record; plotdata reads attack records",
                    p.display(),
                    r.command
                );
            }
            Ok((p.clone(), r))
        })
        .collect()
}

fn check_traced(path: &Path, record: &AttackRecord) -> Result<()> {
    let untraced = record
        .trials
        .iter()
        .filter_map(|t| t.run.as_ref())
        .any(|r| r.proposals > 0 && r.trace.is_empty());
    if untraced {
        bail!(
            "{} has no per-step traces; rerun `wmlab attack` with --trace",
            path.display()
        );
    }
    Ok(())
}

pub fn long_rows(records: &[(PathBuf, AttackRecord)]) -> Result<Vec<LongRow>> {
    let mut rows = Vec::new();
    let mut offset = 0;
    for (path, record) in records {
        check_traced(path, record)?;
        let mut next = offset;
        for t in &record.trials {
            let trial = offset + t.trial;
            next = next.max(trial + 1);
            let Some(run) = &t.run else { continue };
            for s in &run.trace {
                if let Some(z) = s.z {
                    rows.push(LongRow {
                        trial,
                        step: s.step,
                        metric: "z",
                        value: z,
                    });
                }
                rows.push(LongRow {
                    trial,
                    step: s.step,
                    metric: "quality",
                    value: s.quality,
                });
            }
        }
        offset = next;
    }
    Ok(rows)
}

pub fn step_means(rows: &[LongRow]) -> Vec<StepMean> {
    let mut acc: BTreeMap<(usize, &'static str), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.step, r.metric)).or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|((step, metric), (sum, n))| StepMean {
            step,
            metric,
            mean: sum / n as f64,
            n,
        })
        .collect()
}

/// Equal-width bins over the observed range; a constant sample fills one bin.
pub fn histogram(metric: &'static str, values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![HistogramBin {
            metric,
            bin: 0,
            low: lo,
            high: hi,
            count: values.len(),
        }];
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(bin, count)| HistogramBin {
            metric,
            bin,
            low: lo + bin as f64 * width,
            high: if bin + 1 == bins {
                hi
            } else {
                lo + (bin + 1) as f64 * width
            },
            count,
        })
        .collect()
}

pub fn histograms(records: &[(PathBuf, AttackRecord)]) -> Vec<HistogramBin> {
    let mut columns: [(&'static str, Vec<f64>); 4] = [
        ("z_before", Vec::new()),
        ("z_after", Vec::new()),
        ("quality_before", Vec::new()),
        ("quality_after", Vec::new()),
    ];
    for (_, record) in records {
        for t in &record.trials {
            let (Some(b), Some(a), Some(r)) = (t.before, t.after, &t.run) else {
                continue;
            };
            columns[0].1.push(b.statistic);
            columns[1].1.push(a.statistic);
            columns[2].1.push(r.quality_before);
            columns[3].1.push(r.quality_after);
        }
    }
    columns
        .iter()
        .flat_map(|(m, v)| histogram(m, v, HISTOGRAM_BINS))
        .collect()
}

pub fn plotdata(paths: &[PathBuf], out: &Path) -> Result<usize> {
    let records = load_records(paths)?;
    let rows = long_rows(&records)?;
    ensure_dir(out)?;
    let long: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.trial.to_string(),
                r.step.to_string(),
                r.metric.to_string(),
                r.value.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("plot_long.csv"),
        &["trial", "step", "metric", "value"],
        &long,
    )?;
    let means: Vec<Vec<String>> = step_means(&rows)
        .iter()
        .map(|m| {
            vec![
                m.step.to_string(),
                m.metric.to_string(),
                m.mean.to_string(),
                m.n.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("plot_step_means.csv"),
        &["step", "metric", "mean", "n"],
        &means,
    )?;
    let hist: Vec<Vec<String>> = histograms(&records)
        .iter()
        .map(|h| {
            vec![
                h.metric.to_string(),
                h.bin.to_string(),
                h.low.to_string(),
                h.high.to_string(),
                h.count.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("plot_histograms.csv"),
        &["metric", "bin", "low", "high", "count"],
        &hist,
    )?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_value_once() {
        let v: Vec<f64> = (0..101).map(|i| i as f64 / 10.0).collect();
        let h = histogram("z", &v, 20);
        assert_eq!(h.len(), 20);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 101);
        assert_eq!(h[0].low, 0.0);
        assert_eq!(h[19].high, 10.0);
        // 0.0..0.5 holds 0.0..=0.4; the top value lands in the last bin.
        assert_eq!(h[0].count, 5);
        assert_eq!(h[19].count, 6);
    }

    #[test]
    fn constant_sample_is_one_bin() {
        let h = histogram("q", &[0.5, 0.5, 0.5], 20);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].count, 3);
    }

    #[test]
    fn step_means_group_by_step_and_metric() {
        let rows = vec![
            LongRow {
                trial: 0,
                step: 1,
                metric: "z",
                value: 2.0,
            },
            LongRow {
                trial: 1,
                step: 1,
                metric: "z",
                value: 4.0,
            },
            LongRow {
                trial: 0,
                step: 1,
                metric: "quality",
                value: 0.5,
            },
            LongRow {
                trial: 0,
                step: 2,
                metric: "z",
                value: 1.0,
            },
        ];
        let m = step_means(&rows);
        assert_eq!(m.len(), 3);
        assert_eq!(
            m[0],
            StepMean {
                step: 1,
                metric: "quality",
                mean: 0.5,
                n: 1
            }
        );
        assert_eq!(
            m[1],
            StepMean {
                step: 1,
                metric: "z",
                mean: 3.0,
                n: 2
            }
        );
    }
}
