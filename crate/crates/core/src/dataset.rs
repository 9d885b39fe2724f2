//! Heartbeat segmentation and assembly of the training, validation and
//! test input streams.
//!
//! The training stream is a random concatenation of single beats. The
//! evaluation streams concatenate anomalous segments (5 to 10 same-label
//! beats of one record) and blocks of normal beats; anomalous segments are
//! scored as one unit, normal beats individually.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wfdb::{BeatAnnotation, BeatLabel, SampledSignal};

pub const MIN_SEGMENT_BEATS: usize = 5;
pub const MAX_SEGMENT_BEATS: usize = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no {0} beats available in the pool")]
    EmptyClassPool(BeatLabel),
    #[error("cannot place a {len}-beat {label} segment: {reason}")]
    InsufficientSegments {
        label: BeatLabel,
        len: usize,
        reason: String,
    },
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("stream file: {0}")]
    Io(#[from] io::Error),
    #[error("interval file: {0}")]
    Csv(#[from] csv::Error),
}

/// One heartbeat, referencing the record signal it was cut from.
#[derive(Debug, Clone)]
pub struct Beat {
    pub record_name: Arc<str>,
    pub label: BeatLabel,
    /// Half-open sample range in the source record.
    pub source_span: (usize, usize),
    signal: Arc<SampledSignal>,
}

impl Beat {
    pub fn len(&self) -> usize {
        self.source_span.1 - self.source_span.0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> &[f64] {
        let n = self.signal.n_channels;
        &self.signal.as_slice()[self.source_span.0 * n..self.source_span.1 * n]
    }

    pub fn source(&self) -> BeatSource {
        BeatSource {
            record: self.record_name.to_string(),
            start: self.source_span.0,
            end: self.source_span.1,
        }
    }
}

/// Contiguous same-label beats of one record, scored as one unit.
#[derive(Debug, Clone)]
pub struct Segment {
    pub beats: Vec<Beat>,
    pub label: BeatLabel,
}

/// Cut a record into beats bounded by the midpoints between neighbouring
/// annotations. Only in-scope labels produce beats, but every annotation
/// takes part in placing the boundaries.
pub fn segment_beats(
    record_name: &str,
    signal: Arc<SampledSignal>,
    annotations: &[BeatAnnotation],
) -> Vec<Beat> {
    let n = signal.n_samples();
    let name: Arc<str> = Arc::from(record_name);
    let mut beats = Vec::new();
    for (k, ann) in annotations.iter().enumerate() {
        if !ann.label.in_scope() {
            continue;
        }
        let start = match k {
            0 => 0,
            _ => (annotations[k - 1].sample_index + ann.sample_index) / 2,
        };
        let end = match annotations.get(k + 1) {
            Some(next) => (ann.sample_index + next.sample_index) / 2,
            None => n,
        };
        let (start, end) = (start.min(n), end.min(n));
        if end > start {
            beats.push(Beat {
                record_name: name.clone(),
                label: ann.label,
                source_span: (start, end),
                signal: signal.clone(),
            });
        }
    }
    beats
}

/// Beats of several records, grouped by record in record order.
#[derive(Debug, Clone, Default)]
pub struct BeatPool {
    records: BTreeMap<String, Vec<Beat>>,
}

impl BeatPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_record(&mut self, name: &str, beats: Vec<Beat>) {
        self.records.insert(name.to_string(), beats);
    }

    pub fn record_names(&self) -> Vec<String> {
        self.records.keys().cloned().collect()
    }

    pub fn beats(&self) -> impl Iterator<Item = &Beat> {
        self.records.values().flatten()
    }

    pub fn of_label(&self, label: BeatLabel) -> Vec<&Beat> {
        self.beats().filter(|b| b.label == label).collect()
    }

    pub fn count(&self, label: BeatLabel) -> usize {
        self.beats().filter(|b| b.label == label).count()
    }

    /// Restrict to the named records.
    pub fn subset(&self, names: &[String]) -> BeatPool {
        BeatPool {
            records: self
                .records
                .iter()
                .filter(|(k, _)| names.contains(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Per record, the beats of `label` in record order.
    fn label_runs(&self, label: BeatLabel) -> Vec<Vec<&Beat>> {
        self.records
            .values()
            .map(|beats| beats.iter().filter(|b| b.label == label).collect::<Vec<_>>())
            .filter(|v| !v.is_empty())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitKind {
    Beat,
    Segment,
}

impl UnitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::Beat => "beat",
            UnitKind::Segment => "segment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BeatSource {
    pub record: String,
    pub start: usize,
    pub end: usize,
}

/// A labelled stretch of an assembled stream, in samples (half-open).
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
    pub label: BeatLabel,
    pub unit_kind: UnitKind,
    pub unit_id: usize,
    pub sources: Vec<BeatSource>,
}

impl Interval {
    pub fn start_s(&self, fs: f64) -> f64 {
        self.start as f64 / fs
    }

    pub fn end_s(&self, fs: f64) -> f64 {
        self.end as f64 / fs
    }

    pub fn n_beats(&self) -> usize {
        self.sources.len()
    }
}

#[derive(Debug, Clone)]
pub struct LabeledStream {
    pub signal: SampledSignal,
    pub intervals: Vec<Interval>,
}

impl LabeledStream {
    pub fn sampling_rate(&self) -> f64 {
        self.signal.sampling_rate
    }

    pub fn duration(&self) -> f64 {
        self.signal.duration()
    }

    /// Beats per label (segments contribute all their beats).
    pub fn beat_counts(&self) -> BTreeMap<BeatLabel, usize> {
        let mut m = BTreeMap::new();
        for iv in &self.intervals {
            *m.entry(iv.label).or_insert(0) += iv.n_beats();
        }
        m
    }

    /// Anomalous segments per label.
    pub fn segment_counts(&self) -> BTreeMap<BeatLabel, usize> {
        let mut m = BTreeMap::new();
        for iv in self.intervals.iter().filter(|i| i.unit_kind == UnitKind::Segment) {
            *m.entry(iv.label).or_insert(0) += 1;
        }
        m
    }

    pub fn sources(&self) -> impl Iterator<Item = &BeatSource> {
        self.intervals.iter().flat_map(|i| i.sources.iter())
    }

    /// Total duration of normal beats, s.
    pub fn normal_duration(&self) -> f64 {
        let fs = self.sampling_rate();
        self.intervals
            .iter()
            .filter(|i| i.label == BeatLabel::Normal)
            .map(|i| (i.end - i.start) as f64 / fs)
            .sum()
    }
}

/// Concatenates beats, shifting each so its first sample continues from the
/// last sample of the previous beat.
struct StreamBuilder {
    signal: SampledSignal,
    intervals: Vec<Interval>,
    last: Option<Vec<f64>>,
}

impl StreamBuilder {
    fn new(sampling_rate: f64, n_channels: usize) -> Self {
        StreamBuilder {
            signal: SampledSignal::empty(sampling_rate, n_channels),
            intervals: Vec::new(),
            last: None,
        }
    }

    fn append_beat(&mut self, beat: &Beat) {
        let n = self.signal.n_channels;
        let samples = beat.samples();
        let offset: Vec<f64> = match &self.last {
            Some(last) => (0..n).map(|c| last[c] - samples[c]).collect(),
            None => vec![0.0; n],
        };
        let mut frame = vec![0.0; n];
        for f in samples.chunks_exact(n) {
            for c in 0..n {
                frame[c] = f[c] + offset[c];
            }
            self.signal.push_frame(&frame);
        }
        self.last = Some(frame);
    }

    fn push_unit(&mut self, beats: &[&Beat], label: BeatLabel, kind: UnitKind) {
        let start = self.signal.n_samples();
        for b in beats {
            self.append_beat(b);
        }
        let unit_id = self.intervals.len();
        self.intervals.push(Interval {
            start,
            end: self.signal.n_samples(),
            label,
            unit_kind: kind,
            unit_id,
            sources: beats.iter().map(|b| b.source()).collect(),
        });
    }

    fn finish(self) -> LabeledStream {
        LabeledStream {
            signal: self.signal,
            intervals: self.intervals,
        }
    }
}

/// Beats per label for the training stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecipe {
    pub normal: usize,
    pub per_anomaly: usize,
    /// Drop classes with an empty pool instead of failing.
    #[serde(default)]
    pub allow_missing_classes: bool,
}

impl TrainingRecipe {
    /// 22,500 normal and 1,500 of each anomaly: 30,000 beats.
    pub fn full() -> Self {
        TrainingRecipe {
            normal: 22_500,
            per_anomaly: 1_500,
            allow_missing_classes: false,
        }
    }

    /// Keeps the 75 % / 5 % proportions for `total` beats.
    pub fn scaled(total: usize) -> Self {
        let per_anomaly = total / 20;
        TrainingRecipe {
            normal: total - 5 * per_anomaly,
            per_anomaly,
            allow_missing_classes: false,
        }
    }

    pub fn count(&self, label: BeatLabel) -> usize {
        match label {
            BeatLabel::Normal => self.normal,
            l if l.is_anomaly() => self.per_anomaly,
            _ => 0,
        }
    }

    pub fn total(&self) -> usize {
        self.normal + 5 * self.per_anomaly
    }
}

fn draw<'a>(pool: &[&'a Beat], n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a Beat> {
    // Without replacement until the pool runs out, then with replacement.
    let mut out = Vec::with_capacity(n);
    let mut order: Vec<&Beat> = pool.to_vec();
    order.shuffle(rng);
    out.extend(order.iter().take(n).copied());
    while out.len() < n {
        out.push(pool[rng.random_range(0..pool.len())]);
    }
    out
}

/// Random concatenation of single beats drawn per the recipe.
pub fn assemble_training_stream(
    pool: &BeatPool,
    recipe: &TrainingRecipe,
    rng_seed: u64,
) -> Result<LabeledStream, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut drawn: Vec<&Beat> = Vec::with_capacity(recipe.total());
    let mut shape = None;
    for label in BeatLabel::IN_SCOPE {
        let n = recipe.count(label);
        if n == 0 {
            continue;
        }
        let candidates = pool.of_label(label);
        if candidates.is_empty() {
            if recipe.allow_missing_classes {
                continue;
            }
            return Err(DatasetError::EmptyClassPool(label));
        }
        shape.get_or_insert((candidates[0].signal.sampling_rate, candidates[0].signal.n_channels));
        drawn.extend(draw(&candidates, n, &mut rng));
    }
    let (fs, n_channels) = shape.ok_or_else(|| DatasetError::InvalidRecipe("recipe selects no beats".into()))?;
    drawn.shuffle(&mut rng);
    let mut builder = StreamBuilder::new(fs, n_channels);
    for beat in drawn {
        builder.push_unit(&[beat], beat.label, UnitKind::Beat);
    }
    Ok(builder.finish())
}

/// Segment and beat counts for an evaluation stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecipe {
    /// Segments per anomaly, in [`BeatLabel::ANOMALIES`] order.
    pub segments: [usize; 5],
    /// Total beats per anomaly over its segments; random 5-10 beat
    /// segments when absent.
    pub anomalous_beats: Option<[usize; 5]>,
    /// Normal beats; three times the anomalous beats when absent.
    pub normal_beats: Option<usize>,
    #[serde(default)]
    pub allow_missing_classes: bool,
}

impl EvalRecipe {
    /// 111 segments, 3,141 beats.
    pub fn validation() -> Self {
        EvalRecipe {
            segments: [24, 22, 22, 21, 22],
            anomalous_beats: Some([175, 176, 154, 153, 168]),
            normal_beats: Some(2315),
            allow_missing_classes: false,
        }
    }

    /// 76 segments, 2,078 beats.
    pub fn test() -> Self {
        EvalRecipe {
            segments: [15, 17, 14, 16, 14],
            anomalous_beats: Some([104, 103, 100, 98, 104]),
            normal_beats: Some(1569),
            allow_missing_classes: false,
        }
    }

    /// `n_segments` spread evenly over the anomalies.
    pub fn small(n_segments: usize) -> Self {
        let mut segments = [n_segments / 5; 5];
        for s in segments.iter_mut().take(n_segments % 5) {
            *s += 1;
        }
        EvalRecipe {
            segments,
            anomalous_beats: None,
            normal_beats: None,
            allow_missing_classes: true,
        }
    }

    pub fn total_segments(&self) -> usize {
        self.segments.iter().sum()
    }
}

/// Random segment lengths in [5, 10] summing to `beats`.
fn segment_lengths(n: usize, beats: Option<usize>, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, String> {
    match beats {
        None => Ok((0..n)
            .map(|_| rng.random_range(MIN_SEGMENT_BEATS..=MAX_SEGMENT_BEATS))
            .collect()),
        Some(b) => {
            if b < n * MIN_SEGMENT_BEATS || b > n * MAX_SEGMENT_BEATS {
                return Err(format!("{b} beats cannot form {n} segments of 5-10 beats"));
            }
            let mut lens = vec![MIN_SEGMENT_BEATS; n];
            for _ in 0..b - n * MIN_SEGMENT_BEATS {
                let open: Vec<usize> = (0..n).filter(|&i| lens[i] < MAX_SEGMENT_BEATS).collect();
                lens[open[rng.random_range(0..open.len())]] += 1;
            }
            Ok(lens)
        }
    }
}

/// Place runs of `lens[i]` consecutive unused beats from the per-record
/// label runs, uniformly among all feasible windows.
fn place_runs<'a>(
    runs: &[Vec<&'a Beat>],
    mut lens: Vec<usize>,
    label: BeatLabel,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<&'a Beat>>, DatasetError> {
    // Longest first so short runs fill the gaps.
    lens.sort_unstable_by(|a, b| b.cmp(a));
    let mut used: Vec<Vec<bool>> = runs.iter().map(|r| vec![false; r.len()]).collect();
    let mut out = Vec::with_capacity(lens.len());
    for len in lens {
        let mut windows = Vec::new();
        for (r, flags) in used.iter().enumerate() {
            let mut free = 0;
            for (i, &u) in flags.iter().enumerate() {
                free = if u { 0 } else { free + 1 };
                if free >= len {
                    windows.push((r, i + 1 - len));
                }
            }
        }
        if windows.is_empty() {
            return Err(DatasetError::InsufficientSegments {
                label,
                len,
                reason: format!(
                    "{} {label} beats left in runs too short",
                    used.iter().flatten().filter(|u| !**u).count()
                ),
            });
        }
        let (r, start) = windows[rng.random_range(0..windows.len())];
        for u in &mut used[r][start..start + len] {
            *u = true;
        }
        out.push(runs[r][start..start + len].to_vec());
    }
    Ok(out)
}

/// Random concatenation of anomalous segments and normal beat blocks.
pub fn assemble_eval_stream(
    pool: &BeatPool,
    recipe: &EvalRecipe,
    rng_seed: u64,
) -> Result<LabeledStream, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut units: Vec<(BeatLabel, Vec<&Beat>)> = Vec::new();
    let mut anomalous_total = 0;
    for (k, label) in BeatLabel::ANOMALIES.into_iter().enumerate() {
        let n = recipe.segments[k];
        if n == 0 {
            continue;
        }
        let runs = pool.label_runs(label);
        if runs.is_empty() {
            if recipe.allow_missing_classes {
                continue;
            }
            return Err(DatasetError::InsufficientSegments {
                label,
                len: MIN_SEGMENT_BEATS,
                reason: "no beats of this label in the pool".into(),
            });
        }
        let lens = segment_lengths(n, recipe.anomalous_beats.map(|b| b[k]), &mut rng)
            .map_err(DatasetError::InvalidRecipe)?;
        for seg in place_runs(&runs, lens, label, &mut rng)? {
            anomalous_total += seg.len();
            units.push((label, seg));
        }
    }

    let normal_target = recipe.normal_beats.unwrap_or(3 * anomalous_total);
    if normal_target > 0 {
        let runs = pool.label_runs(BeatLabel::Normal);
        if runs.is_empty() {
            return Err(DatasetError::EmptyClassPool(BeatLabel::Normal));
        }
        // Blocks of 5-10 normal beats; the remainder tops up the last block.
        let n_blocks = normal_target.div_ceil(MAX_SEGMENT_BEATS).max(1);
        let lens = if normal_target >= n_blocks * MIN_SEGMENT_BEATS {
            segment_lengths(n_blocks, Some(normal_target), &mut rng).map_err(DatasetError::InvalidRecipe)?
        } else {
            vec![normal_target]
        };
        for block in place_runs(&runs, lens, BeatLabel::Normal, &mut rng)? {
            units.push((BeatLabel::Normal, block));
        }
    }

    let first = units
        .first()
        .and_then(|u| u.1.first())
        .ok_or_else(|| DatasetError::InvalidRecipe("recipe selects no beats".into()))?;
    let mut builder = StreamBuilder::new(first.signal.sampling_rate, first.signal.n_channels);
    units.shuffle(&mut rng);
    for (label, beats) in &units {
        if label.is_anomaly() {
            builder.push_unit(beats, *label, UnitKind::Segment);
        } else {
            for b in beats {
                builder.push_unit(&[b], *label, UnitKind::Beat);
            }
        }
    }
    Ok(builder.finish())
}

/// Record-level assignment to the three streams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl RecordSplit {
    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::new();
        self.train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .all(|r| seen.insert(r))
    }
}

/// Seeded split that first gives every stream a record of each anomaly
/// class (rarest class first), then distributes the remaining records by
/// `fractions` (train, validation, test).
pub fn split_records(pool: &BeatPool, fractions: [f64; 3], seed: u64) -> RecordSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = pool.record_names();
    let mut assigned: BTreeMap<String, usize> = BTreeMap::new();
    let holders = |label: BeatLabel| -> Vec<String> {
        names
            .iter()
            .filter(|n| pool.records[*n].iter().any(|b| b.label == label))
            .cloned()
            .collect()
    };
    let mut classes: Vec<(usize, BeatLabel)> = BeatLabel::ANOMALIES
        .into_iter()
        .map(|l| (holders(l).len(), l))
        .collect();
    classes.sort();
    for (_, label) in classes {
        let all = holders(label);
        let mut free: Vec<String> = all.iter().filter(|n| !assigned.contains_key(*n)).cloned().collect();
        free.shuffle(&mut rng);
        for split in 0..3 {
            let covered = all.iter().any(|n| assigned.get(n) == Some(&split));
            if !covered {
                if let Some(r) = free.pop() {
                    assigned.insert(r, split);
                }
            }
        }
    }
    let mut rest: Vec<String> = names.iter().filter(|n| !assigned.contains_key(*n)).cloned().collect();
    rest.shuffle(&mut rng);
    let total = names.len() as f64;
    let norm: f64 = fractions.iter().sum();
    for r in rest {
        // Fill the split furthest below its share.
        let counts: Vec<usize> = (0..3).map(|s| assigned.values().filter(|v| **v == s).count()).collect();
        let split = (0..3)
            .max_by(|&a, &b| {
                let da = fractions[a] / norm * total - counts[a] as f64;
                let db = fractions[b] / norm * total - counts[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .unwrap();
        assigned.insert(r, split);
    }
    let pick = |s: usize| assigned.iter().filter(|(_, v)| **v == s).map(|(k, _)| k.clone()).collect();
    RecordSplit {
        train: pick(0),
        validation: pick(1),
        test: pick(2),
    }
}

const STREAM_MAGIC: &[u8; 4] = b"ECGS";
const STREAM_VERSION: u32 = 1;

/// Binary signal file: magic, version, channel count, sampling rate,
/// frame count, then frame-major little-endian f64 samples.
pub fn write_signal(path: &Path, signal: &SampledSignal) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(STREAM_MAGIC)?;
    w.write_all(&STREAM_VERSION.to_le_bytes())?;
    w.write_all(&(signal.n_channels as u32).to_le_bytes())?;
    w.write_all(&signal.sampling_rate.to_le_bytes())?;
    w.write_all(&(signal.n_samples() as u64).to_le_bytes())?;
    for v in signal.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()
}

pub fn read_signal(path: &Path) -> io::Result<SampledSignal> {
    let mut r = BufReader::new(File::open(path)?);
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != STREAM_MAGIC {
        return Err(bad("not a signal file"));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != STREAM_VERSION {
        return Err(bad("unsupported signal file version"));
    }
    r.read_exact(&mut b4)?;
    let n_channels = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let fs = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    if n_channels == 0 {
        return Err(bad("signal file declares no channels"));
    }
    let mut raw = vec![0u8; n * n_channels * 8];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(SampledSignal::new(fs, n_channels, data))
}

#[derive(Debug, Serialize, Deserialize)]
struct IntervalRow {
    start_s: f64,
    end_s: f64,
    label: String,
    unit_kind: UnitKind,
    unit_id: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct SourceRow {
    unit_id: usize,
    record: String,
    start_sample: usize,
    end_sample: usize,
}

/// Write `<stem>.sig`, `<stem>.intervals.csv` and `<stem>.sources.csv`.
pub fn write_stream(dir: &Path, stem: &str, stream: &LabeledStream) -> Result<(), DatasetError> {
    write_signal(&dir.join(format!("{stem}.sig")), &stream.signal)?;
    let fs = stream.sampling_rate();
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.intervals.csv")))?;
    for iv in &stream.intervals {
        w.serialize(IntervalRow {
            start_s: iv.start_s(fs),
            end_s: iv.end_s(fs),
            label: iv.label.short_name().to_string(),
            unit_kind: iv.unit_kind,
            unit_id: iv.unit_id,
        })?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.sources.csv")))?;
    for iv in &stream.intervals {
        for s in &iv.sources {
            w.serialize(SourceRow {
                unit_id: iv.unit_id,
                record: s.record.clone(),
                start_sample: s.start,
                end_sample: s.end,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read the interval index of a stream; `fs` converts seconds to samples.
pub fn read_intervals(dir: &Path, stem: &str, fs: f64) -> Result<Vec<Interval>, DatasetError> {
    let mut intervals = Vec::new();
    let mut r = csv::Reader::from_path(dir.join(format!("{stem}.intervals.csv")))?;
    for row in r.deserialize::<IntervalRow>() {
        let row = row?;
        let label = BeatLabel::from_short_name(&row.label)
            .ok_or_else(|| DatasetError::InvalidRecipe(format!("unknown label {}", row.label)))?;
        intervals.push(Interval {
            start: (row.start_s * fs).round() as usize,
            end: (row.end_s * fs).round() as usize,
            label,
            unit_kind: row.unit_kind,
            unit_id: row.unit_id,
            sources: Vec::new(),
        });
    }
    let sources_path = dir.join(format!("{stem}.sources.csv"));
    if sources_path.exists() {
        let mut r = csv::Reader::from_path(sources_path)?;
        for row in r.deserialize::<SourceRow>() {
            let row = row?;
            if let Some(iv) = intervals.get_mut(row.unit_id) {
                iv.sources.push(BeatSource {
                    record: row.record,
                    start: row.start_sample,
                    end: row.end_sample,
                });
            }
        }
    }
    Ok(intervals)
}

pub fn read_stream(dir: &Path, stem: &str) -> Result<LabeledStream, DatasetError> {
    let signal = read_signal(&dir.join(format!("{stem}.sig")))?;
    let intervals = read_intervals(dir, stem, signal.sampling_rate)?;
    Ok(LabeledStream { signal, intervals })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(sample_index: usize, label: BeatLabel) -> BeatAnnotation {
        BeatAnnotation { sample_index, label }
    }

    fn flat(n: usize) -> Arc<SampledSignal> {
        Arc::new(SampledSignal::from_channels(360.0, &[vec![0.0; n], vec![0.0; n]]))
    }

    #[test]
    fn midpoint_boundaries() {
        let anns = [ann(100, BeatLabel::Normal), ann(200, BeatLabel::Normal), ann(300, BeatLabel::Normal)];
        let beats = segment_beats("r", flat(400), &anns);
        assert_eq!(beats.len(), 3);
        assert_eq!(beats[0].source_span, (0, 150));
        assert_eq!(beats[1].source_span, (150, 250));
        assert_eq!(beats[2].source_span, (250, 400));
    }

    #[test]
    fn single_annotation_spans_record() {
        let beats = segment_beats("r", flat(100), &[ann(50, BeatLabel::Pvc)]);
        assert_eq!(beats.len(), 1);
        assert_eq!(beats[0].source_span, (0, 100));
    }

    #[test]
    fn other_beats_bound_but_are_dropped() {
        let anns = [ann(100, BeatLabel::Normal), ann(200, BeatLabel::Other), ann(300, BeatLabel::Apb)];
        let beats = segment_beats("r", flat(400), &anns);
        assert_eq!(beats.len(), 2);
        assert_eq!(beats[0].source_span, (0, 150));
        assert_eq!(beats[1].source_span, (250, 400));
    }

    /// Record with a ramp signal so concatenation offsets are observable.
    fn pool_record(name: &str, labels: &[BeatLabel]) -> Vec<Beat> {
        let n = labels.len() * 100 + 100;
        let ramp: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        let sig = Arc::new(SampledSignal::from_channels(360.0, &[ramp.clone(), ramp]));
        let anns: Vec<_> = labels.iter().enumerate().map(|(i, &l)| ann(100 + 100 * i, l)).collect();
        segment_beats(name, sig, &anns)
    }

    fn mixed_pool() -> BeatPool {
        let mut pool = BeatPool::new();
        for r in 0..3 {
            let mut labels = vec![BeatLabel::Normal; 40];
            for a in BeatLabel::ANOMALIES {
                labels.extend([a; 12]);
                labels.extend([BeatLabel::Normal; 5]);
            }
            pool.add_record(&format!("r{r}"), pool_record(&format!("r{r}"), &labels));
        }
        pool
    }

    #[test]
    fn training_counts_and_determinism() {
        let pool = mixed_pool();
        let recipe = TrainingRecipe::scaled(400);
        let s = assemble_training_stream(&pool, &recipe, 7).unwrap();
        let counts = s.beat_counts();
        assert_eq!(counts[&BeatLabel::Normal], 300);
        for a in BeatLabel::ANOMALIES {
            assert_eq!(counts[&a], 20);
        }
        assert!(s.intervals.iter().all(|i| i.unit_kind == UnitKind::Beat));
        let again = assemble_training_stream(&pool, &recipe, 7).unwrap();
        assert_eq!(again.signal, s.signal);
        assert_eq!(again.intervals, s.intervals);
        let other = assemble_training_stream(&pool, &recipe, 8).unwrap();
        assert_ne!(other.intervals, s.intervals);
    }

    #[test]
    fn table_one_training_recipe() {
        let r = TrainingRecipe::full();
        assert_eq!(r.total(), 30_000);
        assert_eq!(r.count(BeatLabel::Normal), 22_500);
        assert_eq!(r.count(BeatLabel::Paced), 1_500);
    }

    #[test]
    fn empty_class_pool() {
        let mut pool = BeatPool::new();
        pool.add_record("r", pool_record("r", &[BeatLabel::Normal; 10]));
        let err = assemble_training_stream(&pool, &TrainingRecipe::scaled(100), 1).unwrap_err();
        assert!(matches!(err, DatasetError::EmptyClassPool(BeatLabel::Lbbb)));
        let mut lenient = TrainingRecipe::scaled(100);
        lenient.allow_missing_classes = true;
        let s = assemble_training_stream(&pool, &lenient, 1).unwrap();
        assert_eq!(s.beat_counts()[&BeatLabel::Normal], 75);
    }

    #[test]
    fn intervals_tile_and_offsets_continue() {
        let pool = mixed_pool();
        let s = assemble_training_stream(&pool, &TrainingRecipe::scaled(100), 3).unwrap();
        assert_eq!(s.intervals[0].start, 0);
        for w in s.intervals.windows(2) {
            assert_eq!(w[0].end, w[1].start);
        }
        assert_eq!(s.intervals.last().unwrap().end, s.signal.n_samples());
        // Each beat starts exactly where the previous one ended.
        for iv in &s.intervals[1..] {
            assert!((s.signal.get(iv.start, 0) - s.signal.get(iv.start - 1, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn table_two_recipes() {
        let v = EvalRecipe::validation();
        assert_eq!(v.total_segments(), 111);
        // The per-label validation counts add up to 3,141 beats.
        assert_eq!(v.anomalous_beats.unwrap().iter().sum::<usize>() + v.normal_beats.unwrap(), 3141);
        let t = EvalRecipe::test();
        assert_eq!(t.total_segments(), 76);
        assert_eq!(t.anomalous_beats.unwrap().iter().sum::<usize>() + t.normal_beats.unwrap(), 2078);
    }

    #[test]
    fn eval_stream_segments() {
        let pool = mixed_pool();
        let recipe = EvalRecipe {
            segments: [2, 2, 2, 2, 2],
            anomalous_beats: Some([12, 15, 10, 20, 14]),
            normal_beats: Some(90),
            allow_missing_classes: false,
        };
        let s = assemble_eval_stream(&pool, &recipe, 11).unwrap();
        let seg = s.segment_counts();
        let beats = s.beat_counts();
        for (k, a) in BeatLabel::ANOMALIES.into_iter().enumerate() {
            assert_eq!(seg[&a], 2);
            assert_eq!(beats[&a], recipe.anomalous_beats.unwrap()[k]);
        }
        assert_eq!(beats[&BeatLabel::Normal], 90);
        let mut seen = HashSet::new();
        for iv in &s.intervals {
            match iv.unit_kind {
                UnitKind::Segment => {
                    assert!((MIN_SEGMENT_BEATS..=MAX_SEGMENT_BEATS).contains(&iv.n_beats()));
                    let rec = &iv.sources[0].record;
                    assert!(iv.sources.iter().all(|b| &b.record == rec));
                }
                UnitKind::Beat => assert_eq!(iv.label, BeatLabel::Normal),
            }
            for src in &iv.sources {
                assert!(seen.insert(src.clone()), "beat used twice");
            }
        }
    }

    #[test]
    fn zero_anomalies_gives_all_normal_stream() {
        let pool = mixed_pool();
        let recipe = EvalRecipe {
            segments: [0; 5],
            anomalous_beats: None,
            normal_beats: Some(30),
            allow_missing_classes: false,
        };
        let s = assemble_eval_stream(&pool, &recipe, 1).unwrap();
        assert!(s.segment_counts().is_empty());
        assert_eq!(s.beat_counts()[&BeatLabel::Normal], 30);
    }

    #[test]
    fn insufficient_segments() {
        let pool = mixed_pool();
        let recipe = EvalRecipe {
            segments: [10, 0, 0, 0, 0],
            anomalous_beats: None,
            normal_beats: Some(0),
            allow_missing_classes: false,
        };
        // 3 records x 12 LBBB beats cannot hold ten 5+ beat segments.
        assert!(matches!(
            assemble_eval_stream(&pool, &recipe, 1),
            Err(DatasetError::InsufficientSegments { .. })
        ));
    }

    #[test]
    fn split_is_disjoint_and_stratified() {
        let mut pool = mixed_pool();
        for r in 3..9 {
            pool.add_record(&format!("n{r}"), pool_record("n", &[BeatLabel::Normal; 20]));
        }
        let s = split_records(&pool, [0.5, 0.25, 0.25], 5);
        assert!(s.is_disjoint());
        assert_eq!(s.train.len() + s.validation.len() + s.test.len(), 9);
        for names in [&s.train, &s.validation, &s.test] {
            let sub = pool.subset(names);
            assert!(BeatLabel::ANOMALIES.iter().all(|&a| sub.count(a) > 0));
        }
        assert_eq!(s, split_records(&pool, [0.5, 0.25, 0.25], 5));
    }

    #[test]
    fn stream_file_roundtrip() {
        let pool = mixed_pool();
        let s = assemble_eval_stream(&pool, &EvalRecipe::small(5), 2).unwrap();
        let dir = std::env::temp_dir().join(format!("ecgres-ds-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        write_stream(&dir, "validation", &s).unwrap();
        let back = read_stream(&dir, "validation").unwrap();
        assert_eq!(back.signal, s.signal);
        assert_eq!(back.intervals, s.intervals);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
