//! Linear readout: exponential filtering of spike trains into a state
//! vector, least-squares training of one unit per anomaly class, threshold
//! calibration and the binary trigger.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Interval, UnitKind};
use crate::simulator::SpikeRecord;
use crate::wfdb::BeatLabel;

pub const N_UNITS: usize = 5;
pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_TAU_OUT: f64 = 0.175;
pub const DEFAULT_RIDGE_FACTOR: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum ReadoutError {
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("degenerate scores for unit {unit}: all {n} samples equal {value}")]
    DegenerateScores { unit: usize, n: usize, value: f64 },
    #[error("invalid readout input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterKernel {
    pub tau_out: f64,
}

impl Default for FilterKernel {
    fn default() -> Self {
        FilterKernel { tau_out: DEFAULT_TAU_OUT }
    }
}

/// A trace this small is about 60 s past its last spike. Flushing it keeps
/// pairwise products in the Gram matrix out of the subnormal range, where
/// floating-point throughput collapses.
pub const FLUSH_BELOW: f64 = 1e-150;

/// Number of state samples `k * period` with `k * period < duration`.
pub fn n_samples(duration: f64, period: f64) -> usize {
    (duration / period - 1e-9).ceil().max(0.0) as usize
}

/// Streaming exponential filter. Rows are produced at `k * period`; a spike
/// at time `s <= t` contributes `exp(-(t - s) / tau)`.
pub struct StateFilter {
    n: usize,
    period: f64,
    tau: f64,
    decay: f64,
    state: Vec<f64>,
    next_row: usize,
}

impl StateFilter {
    pub fn new(n_neurons: usize, kernel: FilterKernel, period: f64) -> Self {
        assert!(period > 0.0 && kernel.tau_out > 0.0, "period and tau must be positive");
        StateFilter {
            n: n_neurons,
            period,
            tau: kernel.tau_out,
            decay: (-period / kernel.tau_out).exp(),
            state: vec![0.0; n_neurons],
            next_row: 0,
        }
    }

    pub fn next_time(&self) -> f64 {
        self.next_row as f64 * self.period
    }

    /// Emit the row at the next sample time. Spikes after the previous row
    /// and up to this sample time must already have been added with
    /// [`StateFilter::add_spike`].
    pub fn emit(&mut self) -> &[f64] {
        self.next_row += 1;
        &self.state
    }

    /// Add a spike at `time`, which must lie in `(previous row, next row]`.
    pub fn add_spike(&mut self, time: f64, neuron: u32) {
        let k = neuron as usize;
        if k < self.n {
            self.state[k] += (-(self.next_time() - time) / self.tau).exp();
        }
    }

    /// Move the state from the row just emitted to the next sample time.
    /// Traces below [`FLUSH_BELOW`] become exactly zero.
    pub fn step(&mut self) {
        for x in &mut self.state {
            *x *= self.decay;
            if *x < FLUSH_BELOW {
                *x = 0.0;
            }
        }
    }

    /// Drive the filter over a time-sorted spike stream, calling `on_row`
    /// with each sample time and state row.
    pub fn run<E>(
        &mut self,
        spikes: impl IntoIterator<Item = Result<(f64, u32), E>>,
        duration: f64,
        mut on_row: impl FnMut(f64, &[f64]) -> Result<(), E>,
    ) -> Result<(), E> {
        let rows = n_samples(duration, self.period);
        let mut spikes = spikes.into_iter().peekable();
        for _ in 0..rows {
            let t = self.next_time();
            while let Some(next) = spikes.peek() {
                match next {
                    Ok((s, _)) if *s <= t + 1e-12 => {
                        let (s, k) = spikes.next().unwrap()?;
                        self.add_spike(s, k);
                    }
                    Ok(_) => break,
                    Err(_) => {
                        spikes.next().unwrap()?;
                    }
                }
            }
            let row = self.emit();
            on_row(t, row)?;
            self.step();
        }
        Ok(())
    }
}

/// Filtered activity sampled on a regular grid, rows = samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    pub x: DMatrix<f64>,
    pub sample_period: f64,
}

impl StateMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn sample_times(&self) -> Vec<f64> {
        (0..self.n_rows()).map(|k| k as f64 * self.sample_period).collect()
    }
}

/// In-memory filtering of a whole record.
pub fn filter_spikes(record: &SpikeRecord, kernel: FilterKernel, sample_period: f64) -> StateMatrix {
    let rows = n_samples(record.duration, sample_period);
    let mut x = DMatrix::zeros(rows, record.n_neurons);
    let mut filter = StateFilter::new(record.n_neurons, kernel, sample_period);
    let mut k = 0;
    filter
        .run(record.spikes.iter().map(|&s| Ok::<_, ()>(s)), record.duration, |_, row| {
            x.row_mut(k).copy_from_slice(row);
            k += 1;
            Ok(())
        })
        .unwrap();
    StateMatrix { x, sample_period }
}

/// Label of the interval containing time `t`, for intervals sorted and
/// tiling the stream. `cursor` speeds up monotone queries.
pub fn label_at(intervals: &[Interval], fs: f64, t: f64, cursor: &mut usize) -> Option<BeatLabel> {
    // Sample index on the ECG grid; the epsilon absorbs k * period rounding.
    let idx = (t * fs + 1e-6).floor();
    if idx < 0.0 {
        return None;
    }
    let idx = idx as usize;
    if *cursor >= intervals.len() || intervals[*cursor].start > idx {
        *cursor = intervals.partition_point(|iv| iv.end <= idx);
    }
    while *cursor < intervals.len() && intervals[*cursor].end <= idx {
        *cursor += 1;
    }
    intervals.get(*cursor).filter(|iv| iv.start <= idx).map(|iv| iv.label)
}

/// Binary targets per anomaly unit, `y[unit][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSignal {
    pub y: Vec<Vec<f64>>,
}

pub fn target_row(label: Option<BeatLabel>) -> [f64; N_UNITS] {
    let mut y = [0.0; N_UNITS];
    if let Some(i) = label.and_then(BeatLabel::anomaly_index) {
        y[i] = 1.0;
    }
    y
}

pub fn build_targets(intervals: &[Interval], fs: f64, sample_times: &[f64]) -> TargetSignal {
    let mut y = vec![vec![0.0; sample_times.len()]; N_UNITS];
    let mut cursor = 0;
    for (k, &t) in sample_times.iter().enumerate() {
        let row = target_row(label_at(intervals, fs, t, &mut cursor));
        for i in 0..N_UNITS {
            y[i][k] = row[i];
        }
    }
    TargetSignal { y }
}

/// Streaming accumulation of `X^T X` and `X^T Y` in row blocks.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    n: usize,
    m: usize,
    xtx: DMatrix<f64>,
    xty: DMatrix<f64>,
    /// Pending rows stored as columns, so that both the copy-in and the
    /// block products run over contiguous memory.
    block_xt: DMatrix<f64>,
    block_yt: DMatrix<f64>,
    filled: usize,
    rows: usize,
}

const BLOCK_ROWS: usize = 256;

impl GramAccumulator {
    pub fn new(n_features: usize, n_targets: usize) -> Self {
        GramAccumulator {
            n: n_features,
            m: n_targets,
            xtx: DMatrix::zeros(n_features, n_features),
            xty: DMatrix::zeros(n_features, n_targets),
            block_xt: DMatrix::zeros(n_features, BLOCK_ROWS),
            block_yt: DMatrix::zeros(n_targets, BLOCK_ROWS),
            filled: 0,
            rows: 0,
        }
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.m);
        self.block_xt.column_mut(self.filled).copy_from_slice(x);
        self.block_yt.column_mut(self.filled).copy_from_slice(y);
        self.filled += 1;
        self.rows += 1;
        if self.filled == BLOCK_ROWS {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.filled == 0 {
            return;
        }
        let bxt = self.block_xt.columns(0, self.filled);
        let by = self.block_yt.columns(0, self.filled).transpose();
        let bx = bxt.transpose();
        self.xtx.gemm(1.0, &bxt, &bx, 1.0);
        self.xty.gemm(1.0, &bxt, &by, 1.0);
        self.filled = 0;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Final `(X^T X, X^T Y)`.
    pub fn finish(mut self) -> (DMatrix<f64>, DMatrix<f64>) {
        self.flush();
        (self.xtx, self.xty)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// `factor * trace(X^T X) / N`.
    Relative(f64),
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(DEFAULT_RIDGE_FACTOR)
    }
}

impl Ridge {
    pub fn value(&self, xtx: &DMatrix<f64>) -> f64 {
        match *self {
            Ridge::Relative(f) => f * xtx.trace() / xtx.nrows().max(1) as f64,
            Ridge::Absolute(v) => v,
        }
    }
}

/// Solve `(X^T X + ridge I) W = X^T Y` by Cholesky.
pub fn solve_normal_equations(
    xtx: &DMatrix<f64>,
    xty: &DMatrix<f64>,
    ridge: f64,
) -> Result<DMatrix<f64>, ReadoutError> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(ReadoutError::Invalid(format!("ridge {ridge} must be finite and non-negative")));
    }
    let n = xtx.nrows();
    let mut a = xtx.clone();
    for k in 0..n {
        a[(k, k)] += ridge;
    }
    let scale = (0..n).map(|k| a[(k, k)]).fold(0.0f64, f64::max);
    let chol = a
        .cholesky()
        .ok_or_else(|| ReadoutError::SingularSystem("normal matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    let min_pivot = (0..n).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
    if n > 0 && (scale == 0.0 || min_pivot <= 1e-13 * scale) {
        return Err(ReadoutError::SingularSystem(format!(
            "smallest pivot {min_pivot:e} against scale {scale:e}; add a ridge term"
        )));
    }
    Ok(chol.solve(xty))
}

/// Per-unit weights minimizing `|X w - y|^2 + ridge |w|^2`.
pub fn train_weights(x: &StateMatrix, targets: &TargetSignal, ridge: Ridge) -> Result<Vec<Vec<f64>>, ReadoutError> {
    let m = targets.y.len();
    let t = x.n_rows();
    if targets.y.iter().any(|y| y.len() != t) {
        return Err(ReadoutError::Invalid("targets do not align with state rows".into()));
    }
    let y = DMatrix::from_fn(t, m, |r, c| targets.y[c][r]);
    let xtx = x.x.tr_mul(&x.x);
    let xty = x.x.tr_mul(&y);
    let w = solve_normal_equations(&xtx, &xty, ridge.value(&xtx))?;
    Ok(weight_columns(&w))
}

pub fn weight_columns(w: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..w.ncols()).map(|c| w.column(c).iter().copied().collect()).collect()
}

/// Per-unit scores at every state sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTrace {
    pub sample_period: f64,
    /// `scores[k][unit]`.
    pub scores: Vec<[f64; N_UNITS]>,
}

impl ScoreTrace {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.sample_period
    }

    pub fn unit(&self, unit: usize) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().map(move |s| s[unit])
    }
}

pub fn scores_of(row: &[f64], weights: &[Vec<f64>]) -> [f64; N_UNITS] {
    let mut s = [0.0; N_UNITS];
    for (i, w) in weights.iter().enumerate().take(N_UNITS) {
        s[i] = w.iter().zip(row).map(|(a, b)| a * b).sum();
    }
    s
}

pub fn score_matrix(x: &StateMatrix, weights: &[Vec<f64>]) -> ScoreTrace {
    ScoreTrace {
        sample_period: x.sample_period,
        scores: (0..x.n_rows())
            .map(|k| {
                let row: Vec<f64> = x.x.row(k).iter().copied().collect();
                scores_of(&row, weights)
            })
            .collect(),
    }
}

/// Maximum of `unit`'s score over the samples of each interval; `None`
/// for intervals that contain no sample.
pub fn interval_maxima(trace: &ScoreTrace, unit: usize, intervals: &[Interval], fs: f64) -> Vec<Option<f64>> {
    let mut max: Vec<Option<f64>> = vec![None; intervals.len()];
    let mut cursor = 0;
    for (k, s) in trace.scores.iter().enumerate() {
        if label_at(intervals, fs, trace.time(k), &mut cursor).is_some() {
            let m = &mut max[cursor];
            *m = Some(m.map_or(s[unit], |v: f64| v.max(s[unit])));
        }
    }
    max
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub theta: f64,
    pub cost: f64,
    pub missed_segments: usize,
    pub false_alarm_beats: usize,
}

/// Cost of threshold `theta` given per-segment and per-normal-beat maxima.
pub fn threshold_cost(theta: f64, segment_max: &[f64], normal_max: &[f64], lambda: f64) -> (f64, usize, usize) {
    let missed = segment_max.iter().filter(|&&m| m <= theta).count();
    let alarms = normal_max.iter().filter(|&&m| m > theta).count();
    (missed as f64 + lambda * alarms as f64, missed, alarms)
}

/// Pick the candidate threshold with minimal cost, preferring the larger
/// threshold on ties. `candidates` must be sorted ascending and unique.
pub fn sweep_thresholds(candidates: &[f64], segment_max: &[f64], normal_max: &[f64], lambda: f64) -> Calibration {
    let mut seg = segment_max.to_vec();
    let mut nor = normal_max.to_vec();
    seg.sort_by(f64::total_cmp);
    nor.sort_by(f64::total_cmp);
    let mut best: Option<Calibration> = None;
    for &theta in candidates {
        let missed = seg.partition_point(|&m| m <= theta);
        let alarms = nor.len() - nor.partition_point(|&m| m <= theta);
        let cost = missed as f64 + lambda * alarms as f64;
        if best.as_ref().is_none_or(|b| cost <= b.cost) {
            best = Some(Calibration {
                theta,
                cost,
                missed_segments: missed,
                false_alarm_beats: alarms,
            });
        }
    }
    best.expect("at least one candidate")
}

/// Choose one threshold per unit on a validation score trace: minimize
/// missed segments of the unit's class plus `lambda` times normal beats with
/// a supra-threshold sample, over the achieved score values.
pub fn calibrate_thresholds(
    trace: &ScoreTrace,
    intervals: &[Interval],
    fs: f64,
    lambda: f64,
) -> Result<Vec<Calibration>, ReadoutError> {
    if trace.is_empty() {
        return Err(ReadoutError::Invalid("empty validation trace".into()));
    }
    let mut out = Vec::with_capacity(N_UNITS);
    for (unit, label) in BeatLabel::ANOMALIES.into_iter().enumerate() {
        let maxima = interval_maxima(trace, unit, intervals, fs);
        let mut segment_max = Vec::new();
        let mut normal_max = Vec::new();
        for (iv, m) in intervals.iter().zip(&maxima) {
            let Some(m) = *m else { continue };
            if iv.unit_kind == UnitKind::Segment && iv.label == label {
                segment_max.push(m);
            } else if iv.label == BeatLabel::Normal {
                normal_max.push(m);
            }
        }
        let mut candidates: Vec<f64> = trace.unit(unit).collect();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        if candidates.len() == 1 {
            return Err(ReadoutError::DegenerateScores {
                unit,
                n: trace.len(),
                value: candidates[0],
            });
        }
        out.push(sweep_thresholds(&candidates, &segment_max, &normal_max, lambda));
    }
    Ok(out)
}

/// Trigger bit: any unit strictly above its threshold.
pub fn trigger(scores: &[f64; N_UNITS], thresholds: &[f64]) -> bool {
    scores.iter().zip(thresholds).any(|(s, t)| s > t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutModel {
    pub version: u32,
    pub kernel: FilterKernel,
    pub sample_period: f64,
    pub n_neurons: usize,
    /// One weight vector per anomaly unit, in [`BeatLabel::ANOMALIES`] order.
    pub weights: Vec<Vec<f64>>,
    /// Empty until calibrated.
    pub thresholds: Vec<f64>,
    pub ridge: f64,
    pub training_rows: usize,
    pub provenance: BTreeMap<String, String>,
}

impl ReadoutModel {
    pub fn is_calibrated(&self) -> bool {
        self.thresholds.len() == N_UNITS && self.thresholds.iter().all(|t| t.is_finite())
    }

    /// Per-unit scores and the trigger bit for one state row.
    pub fn evaluate(&self, row: &[f64]) -> ([f64; N_UNITS], bool) {
        let s = scores_of(row, &self.weights);
        (s, trigger(&s, &self.thresholds))
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let m: ReadoutModel = serde_json::from_str(s).map_err(|e| e.to_string())?;
        if m.version != MODEL_VERSION {
            return Err(format!("unsupported model version {}", m.version));
        }
        if m.weights.len() != N_UNITS || m.weights.iter().any(|w| w.len() != m.n_neurons) {
            return Err("weight vectors do not match the neuron count".into());
        }
        Ok(m)
    }
}
