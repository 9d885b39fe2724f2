//! Commands that work on single files, outside a configured run.

use std::fs;
use std::path::{Path, PathBuf};

use ecgres_core::dataset::read_signal;
use ecgres_core::encoder::calibrate_delta;
use ecgres_core::readout::{ReadoutModel, StateFilter, ScoreTrace};
use ecgres_core::simulator::{simulate, SimOptions};
use ecgres_core::wfdb::list_records;

use crate::config::DatasetSection;
use crate::error::{format_err, io_at, PipelineError, Result};
use crate::stages::{build_dataset, encode_file, load_pool, read_event_train, write_scores, DatasetInfo, Network};

/// Split the records of `records_dir` and write the three streams. The
/// stream seeds follow `seed` as `seed + 1`, `seed + 2`, `seed + 3`.
pub fn dataset_build(records_dir: &Path, seed: u64, section: &DatasetSection, out: &Path) -> Result<DatasetInfo> {
    let available = list_records(records_dir)?;
    let names = if section.records.is_empty() { available } else { section.records.clone() };
    if names.is_empty() {
        return Err(PipelineError::Config(format!("no records in {}", records_dir.display())));
    }
    let (pool, fs, nch) = load_pool(records_dir, &names)?;
    fs::create_dir_all(out).map_err(io_at(out))?;
    build_dataset(
        &pool,
        fs,
        nch,
        section.split_fractions,
        [seed, seed.wrapping_add(1), seed.wrapping_add(2), seed.wrapping_add(3)],
        (section.training_recipe(), section.validation_recipe(), section.test_recipe()),
        out,
    )
}

/// Encode a signal file at `target_rate` events per second per channel.
pub fn encode_signal(input: &Path, target_rate: f64, out: &Path) -> Result<ecgres_core::events::EventFileMeta> {
    let signal = read_signal(input).map_err(io_at(input))?;
    let cfg = calibrate_delta(&signal, target_rate)?;
    drop(signal);
    encode_file(input, &cfg, out)
}

/// Network files next to a run: `<run>/build/{topology,params}.json` and
/// `<run>/tune/weights.json`.
pub fn network_of_run(run_dir: &Path) -> Result<Network> {
    let b = run_dir.join("build");
    Network::load(
        &b.join("topology.json"),
        &b.join("params.json"),
        Some(&run_dir.join("tune").join("weights.json")),
    )
}

/// The run directory a model file belongs to (`<run>/<stage>/model.json`).
pub fn run_dir_of_model(model: &Path) -> Option<PathBuf> {
    model.parent()?.parent().map(Path::to_path_buf)
}

/// Simulate encoder events through the network, score every state sample
/// with a calibrated model and write the trigger series.
pub fn run_model(model_path: &Path, events: &Path, network: &Network, dt: f64, out: &Path) -> Result<usize> {
    let text = fs::read_to_string(model_path).map_err(io_at(model_path))?;
    let model = ReadoutModel::from_json(&text).map_err(format_err)?;
    if !model.is_calibrated() {
        return Err(format_err(format!("{} has no thresholds; calibrate it first", model_path.display())));
    }
    if model.n_neurons != network.topology.n_neurons() {
        return Err(format_err("model and network disagree on the neuron count"));
    }
    let input = read_event_train(events, None)?;
    let opts = SimOptions { dt, ..SimOptions::default() };
    let spikes = simulate(&network.topology, &network.params, &network.weights, &input, opts)?;
    let mut trace = ScoreTrace {
        sample_period: model.sample_period,
        scores: Vec::new(),
    };
    let mut filter = StateFilter::new(model.n_neurons, model.kernel, model.sample_period);
    filter.run(
        spikes.spikes.iter().map(|&s| Ok::<_, PipelineError>(s)),
        spikes.duration,
        |_, row| {
            trace.scores.push(model.evaluate(row).0);
            Ok(())
        },
    )?;
    write_scores(out, &trace, &model.thresholds)?;
    Ok(trace.len())
}
