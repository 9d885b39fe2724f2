//! Detection metrics. Positives are counted per anomalous segment and
//! negatives per normal beat; a segment counts as detected when any unit
//! fires inside it, whatever its class.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Interval, UnitKind};
use crate::readout::{label_at, ScoreTrace, N_UNITS};
use crate::wfdb::BeatLabel;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("trigger series does not cover interval {unit_id} ({start_s:.3}-{end_s:.3} s)")]
    CoverageGap { unit_id: usize, start_s: f64, end_s: f64 },
    #[error("{0} thresholds given, {N_UNITS} expected")]
    Thresholds(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Counts {
    pub fn segments(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn normal_beats(&self) -> usize {
        self.tn + self.fp
    }
}

/// Overall counts, and per anomaly class: that class's segments (detected by
/// any unit) against normal beats flagged by that class's unit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub overall: Counts,
    pub per_anomaly: [Counts; N_UNITS],
}

/// Tally outcomes from a score trace and per-unit thresholds.
pub fn count_outcomes(
    trace: &ScoreTrace,
    thresholds: &[f64],
    intervals: &[Interval],
    fs: f64,
) -> Result<ConfusionCounts, EvalError> {
    if thresholds.len() != N_UNITS {
        return Err(EvalError::Thresholds(thresholds.len()));
    }
    // Per interval: which units exceeded their threshold at least once.
    let mut fired = vec![[false; N_UNITS]; intervals.len()];
    let mut covered = vec![false; intervals.len()];
    let mut cursor = 0;
    for (k, s) in trace.scores.iter().enumerate() {
        if label_at(intervals, fs, trace.time(k), &mut cursor).is_none() {
            continue;
        }
        covered[cursor] = true;
        for u in 0..N_UNITS {
            fired[cursor][u] |= s[u] > thresholds[u];
        }
    }
    let mut c = ConfusionCounts::default();
    for (k, iv) in intervals.iter().enumerate() {
        if !covered[k] {
            return Err(EvalError::CoverageGap {
                unit_id: iv.unit_id,
                start_s: iv.start_s(fs),
                end_s: iv.end_s(fs),
            });
        }
        let any = fired[k].iter().any(|&f| f);
        match (iv.unit_kind, iv.label) {
            (UnitKind::Segment, label) if label.is_anomaly() => {
                let i = label.anomaly_index().unwrap();
                let slot = if any { 0 } else { 1 };
                for counts in [&mut c.overall, &mut c.per_anomaly[i]] {
                    if slot == 0 {
                        counts.tp += 1;
                    } else {
                        counts.fn_ += 1;
                    }
                }
            }
            (_, BeatLabel::Normal) => {
                if any {
                    c.overall.fp += 1;
                } else {
                    c.overall.tn += 1;
                }
                for u in 0..N_UNITS {
                    if fired[k][u] {
                        c.per_anomaly[u].fp += 1;
                    } else {
                        c.per_anomaly[u].tn += 1;
                    }
                }
            }
            _ => {}
        }
    }
    Ok(c)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Ratios are `None` when undefined (0/0). `mtbfp_s` is `None` when there
/// are no false positives (infinite mean time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub mtbfp_s: Option<f64>,
}

impl MetricReport {
    pub fn mtbfp(&self) -> f64 {
        self.mtbfp_s.unwrap_or(f64::INFINITY)
    }
}

pub fn compute_metrics(c: &Counts, normal_duration: f64) -> MetricReport {
    MetricReport {
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        ppv: ratio(c.tp, c.tp + c.fp),
        npv: ratio(c.tn, c.tn + c.fn_),
        mtbfp_s: (c.fp > 0).then(|| normal_duration / c.fp as f64),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub counts: Counts,
    pub metrics: MetricReport,
}

/// Five class rows followed by the overall row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub normal_duration_s: f64,
    pub rows: Vec<MetricRow>,
    pub notes: Vec<String>,
}

pub fn metrics_table(c: &ConfusionCounts, normal_duration: f64) -> MetricsTable {
    let mut rows: Vec<MetricRow> = BeatLabel::ANOMALIES
        .iter()
        .zip(&c.per_anomaly)
        .map(|(l, counts)| MetricRow {
            label: l.short_name().to_string(),
            counts: *counts,
            metrics: compute_metrics(counts, normal_duration),
        })
        .collect();
    rows.push(MetricRow {
        label: "OVERALL".into(),
        counts: c.overall,
        metrics: compute_metrics(&c.overall, normal_duration),
    });
    MetricsTable {
        normal_duration_s: normal_duration,
        rows,
        notes: vec![
            "reference overall row: sensitivity 92.11 %, specificity 97.6 %, PPV 65.42 %, NPV 99.61 %, MTBFP 31.5 s (an overall detection rate of 91.3 % is also quoted for the same run)".into(),
        ],
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |x| format!("{:.2}", 100.0 * x))
}

impl fmt::Display for MetricsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>11} {:>11} {:>8} {:>8} {:>10}   {:>4} {:>4} {:>4} {:>5}",
            "anomaly", "sens (%)", "spec (%)", "PPV (%)", "NPV (%)", "MTBFP (s)", "TP", "FN", "FP", "TN"
        )?;
        for r in &self.rows {
            let m = &r.metrics;
            let mtbfp = m.mtbfp_s.map_or_else(|| "inf".to_string(), |v| format!("{v:.2}"));
            writeln!(
                f,
                "{:<10} {:>11} {:>11} {:>8} {:>8} {:>10}   {:>4} {:>4} {:>4} {:>5}",
                r.label,
                pct(m.sensitivity),
                pct(m.specificity),
                pct(m.ppv),
                pct(m.npv),
                mtbfp,
                r.counts.tp,
                r.counts.fn_,
                r.counts.fp,
                r.counts.tn
            )?;
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}
