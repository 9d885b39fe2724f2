//! Pipeline stages. Each stage reads its inputs from files written by
//! earlier stages and writes its outputs to `<out_dir>/<stage>/`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ecgres_core::dataset::{
    assemble_eval_stream, assemble_training_stream, read_intervals, read_signal, segment_beats, split_records,
    write_stream, BeatPool, EvalRecipe, Interval, LabeledStream, RecordSplit, TrainingRecipe,
};
use ecgres_core::encoder::{calibrate_delta, encode, EncoderConfig};
use ecgres_core::eval::{count_outcomes, metrics_table, ConfusionCounts, MetricsTable};
use ecgres_core::events::{
    read_meta, write_meta, AerReader, AerRecord, AerWriter, Event, EventFileMeta, EventKind, EventTrain, Polarity,
};
use ecgres_core::readout::{
    calibrate_thresholds, label_at, n_samples, solve_normal_equations, target_row, weight_columns, Calibration,
    GramAccumulator, ReadoutModel, ScoreTrace, StateFilter, MODEL_VERSION, N_UNITS,
};
use ecgres_core::simulator::{
    check_edge, network_params, tune_to_edge, NeuronParams, RateCounter, RateReport, Simulator, TuneOutcome,
};
use ecgres_core::topology::{build_with, connectivity_report, NetworkTopology, Population, TopologyConfig, WeightTable};
use ecgres_core::wfdb::{read_record, BeatLabel};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{hash_json, ExperimentConfig};
use crate::error::{format_err, io_at, PipelineError, Result};
use crate::manifest::{key_of, list_files, sha256_file, Manifest, StageEntry};

pub const STREAMS: [&str; 3] = ["train", "validation", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Dataset,
    Encode,
    Build,
    Tune,
    Simulate,
    Train,
    Calibrate,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Dataset,
        Stage::Encode,
        Stage::Build,
        Stage::Tune,
        Stage::Simulate,
        Stage::Train,
        Stage::Calibrate,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Dataset => "dataset",
            Stage::Encode => "encode",
            Stage::Build => "build",
            Stage::Tune => "tune",
            Stage::Simulate => "simulate",
            Stage::Train => "train",
            Stage::Calibrate => "calibrate",
            Stage::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ran,
    Skipped,
}

/// Where an input comes from: a stage of this run or the record database.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    Stage(&'static str),
    External,
}

const REPORT: &str = "report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub duration_s: f64,
    pub n_samples: usize,
    pub normal_duration_s: f64,
    pub beats: BTreeMap<String, usize>,
    pub segments: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub sampling_rate: f64,
    pub n_channels: usize,
    pub split: RecordSplit,
    pub training_recipe: TrainingRecipe,
    pub validation_recipe: EvalRecipe,
    pub test_recipe: EvalRecipe,
    pub streams: BTreeMap<String, StreamInfo>,
}

impl DatasetInfo {
    pub fn stream(&self, name: &str) -> Result<&StreamInfo> {
        self.streams
            .get(name)
            .ok_or_else(|| format_err(format!("dataset description lacks stream {name}")))
    }
}

fn stream_info(s: &LabeledStream) -> StreamInfo {
    let names = |m: BTreeMap<BeatLabel, usize>| m.into_iter().map(|(l, n)| (l.short_name().to_string(), n)).collect();
    StreamInfo {
        duration_s: s.duration(),
        n_samples: s.signal.n_samples(),
        normal_duration_s: s.normal_duration(),
        beats: names(s.beat_counts()),
        segments: names(s.segment_counts()),
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    serde_json::from_slice(&bytes).map_err(|e| format_err(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(io_at(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_at(path))
}

/// Record pool of the named records, beats cut per record.
pub fn load_pool(records_dir: &Path, names: &[String]) -> Result<(BeatPool, f64, usize)> {
    let mut pool = BeatPool::new();
    let mut shape = None;
    for name in names {
        let rec = read_record(records_dir, name)?;
        let fs = rec.signal.sampling_rate;
        let nch = rec.signal.n_channels;
        match shape {
            None => shape = Some((fs, nch)),
            Some(s) if s != (fs, nch) => {
                return Err(format_err(format!(
                    "record {name} has {nch} channels at {fs} Hz, others {} at {} Hz",
                    s.1, s.0
                )))
            }
            _ => {}
        }
        let beats = segment_beats(name, Arc::new(rec.signal), &rec.annotations);
        pool.add_record(name, beats);
    }
    let (fs, nch) = shape.ok_or_else(|| format_err("no records selected"))?;
    Ok((pool, fs, nch))
}

/// Split, assemble and write the three streams into `out`.
pub fn build_dataset(
    pool: &BeatPool,
    fs: f64,
    n_channels: usize,
    fractions: [f64; 3],
    seeds: [u64; 4],
    recipes: (TrainingRecipe, EvalRecipe, EvalRecipe),
    out: &Path,
) -> Result<DatasetInfo> {
    let split = split_records(pool, fractions, seeds[0]);
    let (training_recipe, validation_recipe, test_recipe) = recipes;
    let mut streams = BTreeMap::new();
    for (k, name) in STREAMS.iter().enumerate() {
        let sub = pool.subset(match k {
            0 => &split.train,
            1 => &split.validation,
            _ => &split.test,
        });
        let stream = match k {
            0 => assemble_training_stream(&sub, &training_recipe, seeds[1])?,
            1 => assemble_eval_stream(&sub, &validation_recipe, seeds[2])?,
            _ => assemble_eval_stream(&sub, &test_recipe, seeds[3])?,
        };
        write_stream(out, name, &stream)?;
        streams.insert(name.to_string(), stream_info(&stream));
    }
    let info = DatasetInfo {
        sampling_rate: fs,
        n_channels,
        split,
        training_recipe,
        validation_recipe,
        test_recipe,
        streams,
    };
    write_json(&out.join("streams.json"), &info)?;
    Ok(info)
}

fn line_names(n_channels: usize) -> Vec<String> {
    (0..n_channels)
        .flat_map(|c| [format!("ch{c}_up"), format!("ch{c}_down")])
        .collect()
}

/// Encode a signal file into an event file with its sidecar.
pub fn encode_file(signal_path: &Path, cfg: &EncoderConfig, out: &Path) -> Result<EventFileMeta> {
    let signal = read_signal(signal_path).map_err(io_at(signal_path))?;
    let train = encode(&signal, cfg)?;
    let mut w = AerWriter::create(out).map_err(io_at(out))?;
    for r in train.to_records() {
        w.write(&r).map_err(io_at(out))?;
    }
    w.finish().map_err(io_at(out))?;
    let meta = EventFileMeta {
        version: 1,
        kind: EventKind::Encoder,
        duration_s: train.duration,
        n_sources: train.n_lines(),
        source_map: line_names(train.n_channels),
        delta_mv: cfg.delta.clone(),
        n_events: train.events.len(),
    };
    write_meta(out, &meta).map_err(io_at(out))?;
    Ok(meta)
}

/// Encoder events from `path`, truncated to `limit` seconds when given.
pub fn read_event_train(path: &Path, limit: Option<f64>) -> Result<EventTrain> {
    let meta = read_meta(path).map_err(io_at(path))?;
    if meta.kind != EventKind::Encoder {
        return Err(format_err(format!("{} does not hold encoder events", path.display())));
    }
    let duration = limit.map_or(meta.duration_s, |l| l.min(meta.duration_s));
    let mut events = Vec::with_capacity(meta.n_events);
    for r in AerReader::open(path).map_err(io_at(path))? {
        let r = r.map_err(io_at(path))?;
        if r.time >= duration && limit.is_some() {
            break;
        }
        let polarity = Polarity::from_meta(r.meta)
            .ok_or_else(|| format_err(format!("{}: bad polarity byte {}", path.display(), r.meta)))?;
        events.push(Event {
            time: r.time,
            channel: r.source / 2,
            polarity,
        });
    }
    Ok(EventTrain {
        events,
        duration,
        n_channels: meta.n_sources / 2,
    })
}

/// Network artifacts as written by the build and tune stages.
pub struct Network {
    pub topology: NetworkTopology,
    pub params: Vec<NeuronParams>,
    pub weights: WeightTable,
}

impl Network {
    pub fn load(topology: &Path, params: &Path, weights: Option<&Path>) -> Result<Self> {
        let text = fs::read_to_string(topology).map_err(io_at(topology))?;
        let topology = NetworkTopology::from_json(&text).map_err(format_err)?;
        let params: Vec<NeuronParams> = read_json(params)?;
        let weights = match weights {
            Some(p) => read_json(p)?,
            None => WeightTable::template(),
        };
        Ok(Network {
            topology,
            params,
            weights,
        })
    }
}

fn neuron_names(t: &NetworkTopology) -> Vec<String> {
    Population::ALL
        .iter()
        .flat_map(|&p| (0..t.populations.size(p)).map(move |i| format!("{}{i}", p.short_name())))
        .collect()
}

/// Simulate `input` and stream the spikes to `out`. Returns the rate series.
pub fn simulate_to_file(
    net: &Network,
    input: &EventTrain,
    opts: ecgres_core::simulator::SimOptions,
    rate_window: f64,
    out: &Path,
) -> Result<(EventFileMeta, RateReport)> {
    let mut sim = Simulator::new(&net.topology, &net.params, &net.weights, opts)?;
    let mut w = AerWriter::create(out).map_err(io_at(out))?;
    let mut counter = RateCounter::new(net.topology.populations, rate_window, input.duration);
    let mut failed = None;
    sim.run(
        input,
        input.duration,
        |t, k| {
            counter.add(t, k);
            if failed.is_none() {
                if let Err(e) = w.write(&AerRecord { time: t, source: k, meta: 0 }) {
                    failed = Some(e);
                }
            }
        },
        |_| {},
    )?;
    if let Some(e) = failed {
        return Err(io_at(out)(e));
    }
    let n_events = w.written();
    w.finish().map_err(io_at(out))?;
    let meta = EventFileMeta {
        version: 1,
        kind: EventKind::Spikes,
        duration_s: input.duration,
        n_sources: net.topology.n_neurons(),
        source_map: neuron_names(&net.topology),
        delta_mv: Vec::new(),
        n_events,
    };
    write_meta(out, &meta).map_err(io_at(out))?;
    Ok((meta, counter.finish()))
}

fn write_rates(path: &Path, r: &RateReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(e.to_string()))?;
    let mut rows = vec![vec!["window_start_s".to_string()]];
    rows[0].extend(Population::ALL.iter().map(|p| format!("{}_hz", p.short_name())));
    for (k, t) in r.window_starts.iter().enumerate() {
        let mut row = vec![format!("{t}")];
        row.extend(r.rates.iter().map(|v| format!("{}", v[k])));
        rows.push(row);
    }
    for row in rows {
        w.write_record(&row).map_err(|e| format_err(e.to_string()))?;
    }
    w.flush().map_err(io_at(path))
}

fn spike_stream(path: &Path) -> Result<impl Iterator<Item = Result<(f64, u32)>> + '_> {
    let reader = AerReader::open(path).map_err(io_at(path))?;
    Ok(reader.map(move |r| r.map(|r| (r.time, r.source)).map_err(io_at(path))))
}

fn spike_meta(path: &Path) -> Result<EventFileMeta> {
    let meta = read_meta(path).map_err(io_at(path))?;
    if meta.kind != EventKind::Spikes {
        return Err(format_err(format!("{} does not hold spikes", path.display())));
    }
    Ok(meta)
}

/// Accumulate the normal equations over a spike file and solve them.
pub fn train_readout(
    spikes: &Path,
    intervals: &[Interval],
    fs: f64,
    section: &crate::config::ReadoutSection,
) -> Result<ReadoutModel> {
    let meta = spike_meta(spikes)?;
    let mut gram = GramAccumulator::new(meta.n_sources, N_UNITS);
    let mut filter = StateFilter::new(meta.n_sources, section.kernel(), section.sample_period);
    let (mut k, mut cursor) = (0usize, 0usize);
    filter.run(spike_stream(spikes)?, meta.duration_s, |t, row| {
        if k % section.train_row_stride == 0 {
            gram.push(row, &target_row(label_at(intervals, fs, t, &mut cursor)));
        }
        k += 1;
        Ok(())
    })?;
    let rows = gram.rows();
    let (xtx, xty) = gram.finish();
    let ridge = section.ridge.value(&xtx);
    let w = solve_normal_equations(&xtx, &xty, ridge)?;
    Ok(ReadoutModel {
        version: MODEL_VERSION,
        kernel: section.kernel(),
        sample_period: section.sample_period,
        n_neurons: meta.n_sources,
        weights: weight_columns(&w),
        thresholds: Vec::new(),
        ridge,
        training_rows: rows,
        provenance: BTreeMap::new(),
    })
}

/// Score every state sample of a spike file.
pub fn score_file(model: &ReadoutModel, spikes: &Path) -> Result<ScoreTrace> {
    let meta = spike_meta(spikes)?;
    if meta.n_sources != model.n_neurons {
        return Err(format_err(format!(
            "{} has {} neurons, the model {}",
            spikes.display(),
            meta.n_sources,
            model.n_neurons
        )));
    }
    let mut trace = ScoreTrace {
        sample_period: model.sample_period,
        scores: Vec::with_capacity(n_samples(meta.duration_s, model.sample_period)),
    };
    let mut filter = StateFilter::new(model.n_neurons, model.kernel, model.sample_period);
    filter.run(spike_stream(spikes)?, meta.duration_s, |_, row| {
        trace.scores.push(model.evaluate(row).0);
        Ok(())
    })?;
    Ok(trace)
}

/// `time_s`, one score per anomaly unit and the trigger bit per row.
pub fn write_scores(path: &Path, trace: &ScoreTrace, thresholds: &[f64]) -> Result<()> {
    let f = fs::File::create(path).map_err(io_at(path))?;
    let mut w = BufWriter::new(f);
    let header: Vec<String> = std::iter::once("time_s".to_string())
        .chain(BeatLabel::ANOMALIES.iter().map(|l| format!("score_{}", l.short_name())))
        .chain(std::iter::once("trigger".to_string()))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io_at(path))?;
    for (k, s) in trace.scores.iter().enumerate() {
        let fired = ecgres_core::readout::trigger(s, thresholds);
        write!(w, "{}", trace.time(k)).map_err(io_at(path))?;
        for v in s {
            write!(w, ",{v}").map_err(io_at(path))?;
        }
        writeln!(w, ",{}", u8::from(fired)).map_err(io_at(path))?;
    }
    w.flush().map_err(io_at(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub counts: ConfusionCounts,
    /// Normal beats flagged over all normal beats.
    pub false_positive_rate: Option<f64>,
    pub table: MetricsTable,
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub manifest: Manifest,
    pub force: bool,
    pub quiet: bool,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, force: bool) -> Result<Self> {
        cfg.validate()?;
        let out = cfg.out_dir.clone();
        fs::create_dir_all(&out).map_err(io_at(&out))?;
        let manifest = Manifest::load_or_new(&out, &cfg.hash())?;
        Ok(Pipeline {
            cfg,
            out,
            manifest,
            force,
            quiet: false,
        })
    }

    fn log(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    fn record_files(&self) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for name in self.records()? {
            for ext in ["hea", "dat", "atr"] {
                out.push(self.cfg.records_dir.join(format!("{name}.{ext}")));
            }
        }
        Ok(out)
    }

    fn records(&self) -> Result<Vec<String>> {
        let available = ecgres_core::wfdb::list_records(&self.cfg.records_dir)?;
        let names = self.cfg.selected_records(&available);
        if names.is_empty() {
            return Err(PipelineError::Config(format!("no records in {}", self.cfg.records_dir.display())));
        }
        Ok(names)
    }

    fn inputs(&self, stage: Option<Stage>) -> Result<Vec<(PathBuf, Origin)>> {
        let at = |s: &'static str, f: &str| (self.dir(s).join(f), Origin::Stage(s));
        let aer = |s: &'static str, stem: &str| {
            let p = self.dir(s).join(format!("{stem}.aer"));
            let side = ecgres_core::events::sidecar_path(&p);
            [(p, Origin::Stage(s)), (side, Origin::Stage(s))]
        };
        let mut v = Vec::new();
        match stage {
            Some(Stage::Ingest) => v.extend(self.record_files()?.into_iter().map(|p| (p, Origin::External))),
            Some(Stage::Dataset) => {
                v.push(at("ingest", "records.json"));
                v.extend(self.record_files()?.into_iter().map(|p| (p, Origin::External)));
            }
            Some(Stage::Encode) => v.extend(STREAMS.iter().map(|s| at("dataset", &format!("{s}.sig")))),
            Some(Stage::Build) => {}
            Some(Stage::Tune) => {
                v.push(at("build", "topology.json"));
                v.push(at("build", "params.json"));
                v.extend(aer("encode", "train"));
            }
            Some(Stage::Simulate) => {
                v.push(at("build", "topology.json"));
                v.push(at("build", "params.json"));
                v.push(at("tune", "weights.json"));
                for s in STREAMS {
                    v.extend(aer("encode", s));
                }
            }
            Some(Stage::Train) => {
                v.push(at("dataset", "streams.json"));
                v.push(at("dataset", "train.intervals.csv"));
                v.extend(aer("simulate", "train"));
            }
            Some(Stage::Calibrate) => {
                v.push(at("dataset", "streams.json"));
                v.push(at("dataset", "validation.intervals.csv"));
                v.push(at("train", "model.json"));
                v.extend(aer("simulate", "validation"));
            }
            Some(Stage::Evaluate) => {
                v.push(at("dataset", "streams.json"));
                v.push(at("dataset", "test.intervals.csv"));
                v.push(at("calibrate", "model.json"));
                v.extend(aer("simulate", "test"));
            }
            None => {
                v.push(at("dataset", "streams.json"));
                v.push(at("dataset", "test.sig"));
                v.push(at("dataset", "test.intervals.csv"));
                v.push(at("tune", "tune.json"));
                v.push(at("evaluate", "metrics.json"));
                v.push(at("evaluate", "scores.csv"));
                for s in STREAMS {
                    v.push(at("simulate", &format!("{s}.rates.csv")));
                }
            }
        }
        Ok(v)
    }

    /// Config fields a stage depends on.
    fn params(&self, stage: Option<Stage>) -> serde_json::Value {
        let c = &self.cfg;
        match stage {
            Some(Stage::Ingest) => json!({ "records": c.dataset.records }),
            Some(Stage::Dataset) => json!({ "seeds": c.seeds, "dataset": c.dataset }),
            Some(Stage::Encode) => json!(c.encoder),
            Some(Stage::Build) => json!({
                "topology": c.topology,
                "seed": c.seeds.topology,
                "mismatch_seed": c.seeds.mismatch,
                "mismatch_cv": c.simulator.mismatch_cv,
                "base": c.simulator.base,
            }),
            Some(Stage::Tune) => json!({ "tune": c.tune, "dt": c.simulator.dt, "max_rate": c.simulator.max_rate }),
            Some(Stage::Simulate) => json!(c.simulator),
            Some(Stage::Train) => json!(c.readout),
            Some(Stage::Calibrate) => json!({ "lambda": c.readout.lambda }),
            Some(Stage::Evaluate) => json!({}),
            None => json!({}),
        }
    }

    /// Hash every input, checking stage outputs against the manifest.
    fn verify_inputs(&self, stage: Option<Stage>) -> Result<BTreeMap<String, String>> {
        let mut hashes = BTreeMap::new();
        for (path, origin) in self.inputs(stage)? {
            let key = key_of(&self.out, &path);
            let producer = match origin {
                Origin::Stage(s) => s,
                Origin::External => {
                    if !path.is_file() {
                        return Err(PipelineError::Config(format!("input {} does not exist", path.display())));
                    }
                    hashes.insert(key, sha256_file(&path)?);
                    continue;
                }
            };
            let missing = || PipelineError::MissingArtifact {
                path: path.clone(),
                stage: producer.to_string(),
            };
            let recorded = self
                .manifest
                .stages
                .get(producer)
                .and_then(|e| e.outputs.get(&key))
                .ok_or_else(missing)?;
            if !path.is_file() {
                return Err(missing());
            }
            let found = sha256_file(&path)?;
            if &found != recorded {
                return Err(PipelineError::StaleArtifact {
                    path,
                    expected: recorded.clone(),
                    found,
                });
            }
            hashes.insert(key, found);
        }
        Ok(hashes)
    }

    fn outputs_intact(&self, entry: &StageEntry) -> Result<bool> {
        for (key, hash) in &entry.outputs {
            let p = self.out.join(key);
            if !p.is_file() || &sha256_file(&p)? != hash {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn entry(&self, stage: Option<Stage>) -> Option<&StageEntry> {
        match stage {
            Some(s) => self.manifest.stages.get(s.name()),
            None => self.manifest.report.as_ref(),
        }
    }

    /// Run one stage, or skip it when its inputs and parameters are
    /// unchanged and its outputs intact. `None` is the report.
    pub fn run(&mut self, stage: Option<Stage>) -> Result<Status> {
        let name = stage.map_or(REPORT, Stage::name);
        let inputs = self.verify_inputs(stage)?;
        let params_hash = hash_json(&self.params(stage));
        if !self.force {
            if let Some(e) = self.entry(stage) {
                if e.params_hash == params_hash && e.inputs == inputs && self.outputs_intact(e)? {
                    self.log(&format!("[{name}] up to date"));
                    return Ok(Status::Skipped);
                }
            }
        }
        let work = self.out.join(format!(".{name}.partial"));
        if work.exists() {
            fs::remove_dir_all(&work).map_err(io_at(&work))?;
        }
        fs::create_dir_all(&work).map_err(io_at(&work))?;
        self.log(&format!("[{name}] running"));
        let t0 = Instant::now();
        let summary = self.execute(stage, &work).map_err(|e| e.in_stage(name))?;
        let seconds = t0.elapsed().as_secs_f64();

        let dir = self.dir(name);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_at(&dir))?;
        }
        fs::rename(&work, &dir).map_err(io_at(&dir))?;
        let mut outputs = BTreeMap::new();
        for rel in list_files(&dir)? {
            let p = dir.join(rel);
            outputs.insert(key_of(&self.out, &p), sha256_file(&p)?);
        }
        let entry = StageEntry {
            params_hash,
            inputs,
            outputs,
            seconds,
            summary,
        };
        match stage {
            Some(s) => {
                self.manifest.stages.insert(s.name().to_string(), entry);
            }
            None => self.manifest.report = Some(entry),
        }
        self.manifest.save(&self.out)?;
        self.log(&format!("[{name}] done in {seconds:.2} s"));
        Ok(Status::Ran)
    }

    pub fn run_all(&mut self) -> Result<()> {
        for s in Stage::ALL {
            self.run(Some(s))?;
        }
        self.run(None)?;
        Ok(())
    }

    fn execute(&self, stage: Option<Stage>, work: &Path) -> Result<serde_json::Value> {
        match stage {
            Some(Stage::Ingest) => self.ingest(work),
            Some(Stage::Dataset) => self.dataset(work),
            Some(Stage::Encode) => self.encode(work),
            Some(Stage::Build) => self.build(work),
            Some(Stage::Tune) => self.tune(work),
            Some(Stage::Simulate) => self.simulate(work),
            Some(Stage::Train) => self.train(work),
            Some(Stage::Calibrate) => self.calibrate(work),
            Some(Stage::Evaluate) => self.evaluate(work),
            None => self.report(work),
        }
    }

    fn dataset_info(&self) -> Result<DatasetInfo> {
        read_json(&self.dir("dataset").join("streams.json"))
    }

    fn ingest(&self, work: &Path) -> Result<serde_json::Value> {
        let mut records = Vec::new();
        let mut totals: BTreeMap<String, usize> = BTreeMap::new();
        for name in self.records()? {
            let rec = read_record(&self.cfg.records_dir, &name)?;
            let mut beats: BTreeMap<String, usize> = BTreeMap::new();
            for a in &rec.annotations {
                *beats.entry(a.label.short_name().to_string()).or_default() += 1;
                *totals.entry(a.label.short_name().to_string()).or_default() += 1;
            }
            records.push(json!({
                "name": name,
                "sampling_rate": rec.header.sampling_rate,
                "n_channels": rec.header.n_channels,
                "n_samples": rec.header.n_samples,
                "duration_s": rec.signal.duration(),
                "beats": beats,
            }));
        }
        let n = records.len();
        write_json(&work.join("records.json"), &json!({ "records": records }))?;
        Ok(json!({ "records": n, "beats": totals }))
    }

    fn dataset(&self, work: &Path) -> Result<serde_json::Value> {
        let listed: serde_json::Value = read_json(&self.dir("ingest").join("records.json"))?;
        let names: Vec<String> = listed["records"]
            .as_array()
            .into_iter()
            .flatten()
            .filter_map(|r| r["name"].as_str().map(str::to_string))
            .collect();
        let (pool, fs, nch) = load_pool(&self.cfg.records_dir, &names)?;
        let d = &self.cfg.dataset;
        let s = &self.cfg.seeds;
        let info = build_dataset(
            &pool,
            fs,
            nch,
            d.split_fractions,
            [s.split, s.training, s.validation, s.test],
            (d.training_recipe(), d.validation_recipe(), d.test_recipe()),
            work,
        )?;
        Ok(json!({ "split": info.split, "streams": info.streams }))
    }

    fn encode(&self, work: &Path) -> Result<serde_json::Value> {
        let src = self.dir("dataset");
        let train_path = src.join("train.sig");
        let train = read_signal(&train_path).map_err(io_at(&train_path))?;
        let cfg = calibrate_delta(&train, self.cfg.encoder.target_rate)?;
        drop(train);
        write_json(&work.join("encoder.json"), &cfg)?;
        let mut rates = BTreeMap::new();
        for s in STREAMS {
            let meta = encode_file(&src.join(format!("{s}.sig")), &cfg, &work.join(format!("{s}.aer")))?;
            let per_channel = meta.n_events as f64 / meta.duration_s.max(f64::MIN_POSITIVE) / (meta.n_sources / 2).max(1) as f64;
            rates.insert(s, json!({ "events": meta.n_events, "rate_per_channel_hz": per_channel }));
        }
        Ok(json!({ "delta_mv": cfg.delta, "streams": rates }))
    }

    fn build(&self, work: &Path) -> Result<serde_json::Value> {
        let topology = build_with(&TopologyConfig::default(), self.cfg.seeds.topology, self.cfg.topology.mode)?;
        let params = network_params(
            &topology.populations,
            &self.cfg.simulator.base,
            self.cfg.simulator.mismatch_cv,
            self.cfg.seeds.mismatch,
        );
        let report = connectivity_report(&topology);
        let p = work.join("topology.json");
        write_text(&p, &topology.to_json().map_err(|e| format_err(e.to_string()))?)?;
        write_json(&work.join("params.json"), &params)?;
        write_json(&work.join("connectivity.json"), &report)?;
        write_text(&work.join("connectivity.txt"), &report.to_string())?;
        Ok(json!({ "neurons": topology.n_neurons(), "connections": topology.connections.len() }))
    }

    fn tune(&self, work: &Path) -> Result<serde_json::Value> {
        let b = self.dir("build");
        let mut net = Network::load(&b.join("topology.json"), &b.join("params.json"), None)?;
        let t = &self.cfg.tune;
        let input = read_event_train(&self.dir("encode").join("train.aer"), Some(t.sample_s))?;
        let opts = self.cfg.simulator.options();
        let outcome = if t.enabled {
            tune_to_edge(&net.topology, &net.params, &t.initial, &input, &t.search, opts)?
        } else {
            net.weights = t.initial.clone();
            let check = check_edge(&net.topology, &net.params, &net.weights, &input, &t.search, opts)?;
            TuneOutcome {
                weights: net.weights.clone(),
                excitation_gain: 1.0,
                inhibition_gain: 1.0,
                evaluations: 1,
                check,
            }
        };
        write_json(&work.join("weights.json"), &outcome.weights)?;
        write_json(&work.join("tune.json"), &outcome)?;
        Ok(json!({
            "evaluations": outcome.evaluations,
            "exc_rate_hz": outcome.check.exc_rate,
            "tail_rate_hz": outcome.check.tail_rate,
            "edge_satisfied": outcome.check.satisfied(&t.search),
        }))
    }

    fn simulate(&self, work: &Path) -> Result<serde_json::Value> {
        let b = self.dir("build");
        let net = Network::load(
            &b.join("topology.json"),
            &b.join("params.json"),
            Some(&self.dir("tune").join("weights.json")),
        )?;
        let mut summary = serde_json::Map::new();
        for s in STREAMS {
            let input = read_event_train(&self.dir("encode").join(format!("{s}.aer")), None)?;
            let (meta, rates) = simulate_to_file(
                &net,
                &input,
                self.cfg.simulator.options(),
                self.cfg.simulator.rate_window,
                &work.join(format!("{s}.aer")),
            )?;
            write_rates(&work.join(format!("{s}.rates.csv")), &rates)?;
            let mean: BTreeMap<&str, f64> = Population::ALL.iter().map(|&p| (p.short_name(), rates.mean(p))).collect();
            summary.insert(s.into(), json!({ "spikes": meta.n_events, "mean_rate_hz": mean }));
        }
        Ok(serde_json::Value::Object(summary))
    }

    fn stream_inputs(&self, stem: &str) -> Result<(f64, Vec<Interval>, PathBuf, StreamInfo)> {
        let info = self.dataset_info()?;
        let fs = info.sampling_rate;
        let intervals = read_intervals(&self.dir("dataset"), stem, fs)?;
        Ok((fs, intervals, self.dir("simulate").join(format!("{stem}.aer")), info.stream(stem)?.clone()))
    }

    fn train(&self, work: &Path) -> Result<serde_json::Value> {
        let (fs, intervals, spikes, _) = self.stream_inputs("train")?;
        let mut model = train_readout(&spikes, &intervals, fs, &self.cfg.readout)?;
        model.provenance.insert("spikes_sha256".into(), sha256_file(&spikes)?);
        model.provenance.insert("config_hash".into(), self.cfg.hash());
        model.provenance.insert("training_seed".into(), self.cfg.seeds.training.to_string());
        model.provenance.insert("row_stride".into(), self.cfg.readout.train_row_stride.to_string());
        write_text(&work.join("model.json"), &model.to_json().map_err(|e| format_err(e.to_string()))?)?;
        Ok(json!({ "training_rows": model.training_rows, "ridge": model.ridge }))
    }

    fn load_model(&self, stage: &str) -> Result<ReadoutModel> {
        let p = self.dir(stage).join("model.json");
        let text = fs::read_to_string(&p).map_err(io_at(&p))?;
        ReadoutModel::from_json(&text).map_err(format_err)
    }

    fn calibrate(&self, work: &Path) -> Result<serde_json::Value> {
        let mut model = self.load_model("train")?;
        let (fs, intervals, spikes, _) = self.stream_inputs("validation")?;
        let trace = score_file(&model, &spikes)?;
        let cal: Vec<Calibration> = calibrate_thresholds(&trace, &intervals, fs, self.cfg.readout.lambda)?;
        model.thresholds = cal.iter().map(|c| c.theta).collect();
        model.provenance.insert("validation_spikes_sha256".into(), sha256_file(&spikes)?);
        write_text(&work.join("model.json"), &model.to_json().map_err(|e| format_err(e.to_string()))?)?;
        let per_unit: BTreeMap<&str, &Calibration> = BeatLabel::ANOMALIES.iter().map(|l| l.short_name()).zip(&cal).collect();
        write_json(&work.join("calibration.json"), &per_unit)?;
        Ok(json!({ "thresholds": model.thresholds }))
    }

    fn evaluate(&self, work: &Path) -> Result<serde_json::Value> {
        let model = self.load_model("calibrate")?;
        let (fs, intervals, spikes, info) = self.stream_inputs("test")?;
        let trace = score_file(&model, &spikes)?;
        let counts = count_outcomes(&trace, &model.thresholds, &intervals, fs)?;
        let table = metrics_table(&counts, info.normal_duration_s);
        let o = counts.overall;
        let metrics = MetricsFile {
            false_positive_rate: (o.fp + o.tn > 0).then(|| o.fp as f64 / (o.fp + o.tn) as f64),
            counts,
            table,
        };
        write_json(&work.join("metrics.json"), &metrics)?;
        write_text(&work.join("metrics.txt"), &metrics.table.to_string())?;
        write_scores(&work.join("scores.csv"), &trace, &model.thresholds)?;
        let overall = &metrics.table.rows[N_UNITS].metrics;
        Ok(json!({
            "sensitivity": overall.sensitivity,
            "specificity": overall.specificity,
            "false_positive_rate": metrics.false_positive_rate,
        }))
    }

    fn report(&self, work: &Path) -> Result<serde_json::Value> {
        let info = self.dataset_info()?;
        let metrics: MetricsFile = read_json(&self.dir("evaluate").join("metrics.json"))?;
        let tune: TuneOutcome = read_json(&self.dir("tune").join("tune.json"))?;

        let mut table1 = String::from("class,train,validation,test,total\n");
        let mut seg = String::from("class,validation,test\n");
        for l in BeatLabel::IN_SCOPE {
            let n = |s: &str| info.streams.get(s).and_then(|i| i.beats.get(l.short_name())).copied().unwrap_or(0);
            let (a, b, c) = (n("train"), n("validation"), n("test"));
            table1 += &format!("{},{a},{b},{c},{}\n", l.short_name(), a + b + c);
            if l.is_anomaly() {
                let m = |s: &str| info.streams.get(s).and_then(|i| i.segments.get(l.short_name())).copied().unwrap_or(0);
                seg += &format!("{},{},{}\n", l.short_name(), m("validation"), m("test"));
            }
        }
        write_text(&work.join("beat_counts.csv"), &table1)?;
        write_text(&work.join("segment_counts.csv"), &seg)?;

        let mut t3 = String::from("anomaly,sensitivity_pct,specificity_pct,ppv_pct,npv_pct,mtbfp_s,tp,fn,fp,tn\n");
        let pct = |v: Option<f64>| v.map_or("undef".to_string(), |x| format!("{:.2}", 100.0 * x));
        for r in &metrics.table.rows {
            let m = &r.metrics;
            t3 += &format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                pct(m.sensitivity),
                pct(m.specificity),
                pct(m.ppv),
                pct(m.npv),
                m.mtbfp_s.map_or("inf".to_string(), |v| format!("{v:.2}")),
                r.counts.tp,
                r.counts.fn_,
                r.counts.fp,
                r.counts.tn
            );
        }
        write_text(&work.join("metrics.csv"), &t3)?;

        let copy = |from: PathBuf, to: &str| fs::copy(&from, work.join(to)).map(|_| ()).map_err(io_at(&from));
        copy(self.dir("evaluate").join("scores.csv"), "score_trace_test.csv")?;
        for s in STREAMS {
            copy(self.dir("simulate").join(format!("{s}.rates.csv")), &format!("rates_{s}.csv"))?;
        }
        self.write_excerpt(&work.join("ecg_excerpt_test.csv"), 10.0)?;

        let mut summary = String::new();
        summary += "Beats per class\n";
        summary += &table1.replace(',', "\t");
        summary += "\nAnomalous segments per class\n";
        summary += &seg.replace(',', "\t");
        summary += &format!(
            "\nReservoir tuning: {} evaluation(s), excitatory rate {:.2} Hz, rate 1 s after input {:.3} Hz\n",
            tune.evaluations, tune.check.exc_rate, tune.check.tail_rate
        );
        summary += &format!("\nTest stream, normal duration {:.1} s\n", metrics.table.normal_duration_s);
        summary += &metrics.table.to_string();
        if let Some(r) = metrics.false_positive_rate {
            summary += &format!("normal beats flagged: {:.2} %\n", 100.0 * r);
        }
        write_text(&work.join("summary.txt"), &summary)?;
        Ok(json!({ "files": list_files(work)?.len() }))
    }

    /// Leading `seconds` of the test stream with the label of each sample.
    fn write_excerpt(&self, path: &Path, seconds: f64) -> Result<()> {
        let src = self.dir("dataset");
        let sig_path = src.join("test.sig");
        let sig = read_signal(&sig_path).map_err(io_at(&sig_path))?;
        let fs = sig.sampling_rate;
        let intervals = read_intervals(&src, "test", fs)?;
        let n = ((seconds * fs) as usize).min(sig.n_samples());
        let mut out = String::from("time_s");
        for c in 0..sig.n_channels {
            out += &format!(",ch{c}_mv");
        }
        out += ",label\n";
        let mut cursor = 0;
        for k in 0..n {
            let t = k as f64 / fs;
            out += &format!("{t}");
            for v in sig.frame(k) {
                out += &format!(",{v}");
            }
            let label = label_at(&intervals, fs, t, &mut cursor).map_or("", |l| l.short_name());
            out += &format!(",{label}\n");
        }
        write_text(path, &out)
    }
}
