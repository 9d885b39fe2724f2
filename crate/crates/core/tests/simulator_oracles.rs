use std::cell::RefCell;
use std::path::Path;

use ecgres_core::encoder::{calibrate_delta, encode};
use ecgres_core::events::{Event, EventTrain, Polarity};
use ecgres_core::simulator::{
    network_params, simulate, NeuronParams, PopulationParams, SimOptions, Simulator,
};
use ecgres_core::topology::{build, build_with, BuildMode, NetworkTopology, Population, PopulationSizes, SynapseType, TopologyConfig, WeightTable};
use ecgres_core::wfdb::read_record;
use ecgres_testkit::oracle::lif_kick_response;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DT: f64 = 1e-4;

/// Input neuron 0 on line 0, nothing recurrent.
fn lone_neuron() -> NetworkTopology {
    let cfg = TopologyConfig {
        sizes: PopulationSizes { input_expansion: 1, excitatory: 1, inhibitory: 1 },
        n_input_lines: 1,
        max_input_multiplicity: 1,
        in_to_exc: 0,
        exc_to_exc: 0,
        inh_to_exc: 0,
        exc_to_inh: 0,
        ..TopologyConfig::default()
    };
    let mut t = build_with(&cfg, 0, BuildMode::Free).unwrap();
    t.input_map[0].multiplicity = 1;
    t
}

fn line_weight(w: f64) -> WeightTable {
    let mut table = WeightTable::zero();
    table.set(Population::InputExpansion, SynapseType::ExcFast, w);
    table
}

fn up_events(times: &[f64], line_channel: u32, duration: f64, n_channels: usize) -> EventTrain {
    EventTrain {
        events: times.iter().map(|&time| Event { time, channel: line_channel, polarity: Polarity::Up }).collect(),
        duration,
        n_channels,
    }
}

/// First `seconds` of record 100, encoded at 400 events/s per channel.
fn ecg_input(seconds: f64) -> EventTrain {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/mitdb");
    let rec = read_record(&dir, "100").unwrap();
    let n = (seconds * rec.signal.sampling_rate) as usize;
    let signal = rec.signal.slice(0, n);
    encode(&signal, &calibrate_delta(&signal, 400.0).unwrap()).unwrap()
}

fn reservoir(seed: u64) -> (NetworkTopology, Vec<NeuronParams>) {
    let t = build(seed, BuildMode::Free).unwrap();
    let p = network_params(&t.populations, &PopulationParams::default(), 0.2, seed + 100);
    (t, p)
}

#[test]
fn single_kick_matches_closed_form() {
    let t = lone_neuron();
    let p = NeuronParams { tau_mem: 0.020, tau_syn: [0.007, 0.1, 0.01, 0.1], ..NeuronParams::default() };
    let w = 0.8;
    // Mid-step event; it takes effect at the start of its step.
    let onset = 150.0 * DT;
    let input = up_events(&[onset + 0.5 * DT], 0, 0.2, 1);
    let mut sim = Simulator::new(&t, &[p; 3], &line_weight(w), SimOptions::default()).unwrap();
    let mut worst = 0.0f64;
    let mut spiked = false;
    sim.run(&input, 0.2, |_, _| spiked = true, |s| {
        let expected = lif_kick_response(w, p.tau_mem, p.tau_syn[0], s.time() - onset);
        worst = worst.max((s.v()[0] - expected).abs());
    })
    .unwrap();
    assert!(!spiked);
    assert!(worst < 1e-6, "max deviation {worst:e}");
}

#[test]
fn equal_time_constants_match_closed_form() {
    let t = lone_neuron();
    let p = NeuronParams { tau_mem: 0.01, tau_syn: [0.01; 4], ..NeuronParams::default() };
    let input = up_events(&[0.0], 0, 0.1, 1);
    let mut sim = Simulator::new(&t, &[p; 3], &line_weight(1.5), SimOptions { dt: 1e-4, ..SimOptions::default() }).unwrap();
    let mut worst = 0.0f64;
    sim.run(&input, 0.1, |_, _| {}, |s| {
        worst = worst.max((s.v()[0] - lif_kick_response(1.5, 0.01, 0.01, s.time())).abs());
    })
    .unwrap();
    assert!(worst < 1e-6, "max deviation {worst:e}");
}

fn random_train(rng: &mut ChaCha8Rng, n: usize, duration: f64) -> Vec<Event> {
    let mut ev: Vec<Event> = (0..n)
        .map(|_| Event {
            time: rng.random_range(0.0..duration),
            channel: rng.random_range(0..2),
            polarity: if rng.random_bool(0.5) { Polarity::Up } else { Polarity::Down },
        })
        .collect();
    ev.sort_by(|a, b| a.time.total_cmp(&b.time));
    ev
}

/// Membrane traces of every neuron at every step with spiking disabled.
fn subthreshold_traces(t: &NetworkTopology, p: &[NeuronParams], events: Vec<Event>, duration: f64) -> Vec<Vec<f64>> {
    let input = EventTrain { events, duration, n_channels: 2 };
    let opts = SimOptions { spiking: false, ..SimOptions::default() };
    let mut sim = Simulator::new(t, p, &WeightTable::template(), opts).unwrap();
    let mut out = Vec::new();
    sim.run(&input, duration, |_, _| {}, |s| out.push(s.v().to_vec())).unwrap();
    out
}

#[test]
fn subthreshold_superposition() {
    let (t, p) = reservoir(3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_train(&mut rng, 300, 0.5);
    let b = random_train(&mut rng, 300, 0.5);
    let mut ab = a.clone();
    ab.extend(&b);
    ab.sort_by(|x, y| x.time.total_cmp(&y.time));
    let (va, vb, vab) = (
        subthreshold_traces(&t, &p, a, 0.5),
        subthreshold_traces(&t, &p, b, 0.5),
        subthreshold_traces(&t, &p, ab, 0.5),
    );
    let mut worst = 0.0f64;
    let mut peak = 0.0f64;
    for ((ra, rb), rab) in va.iter().zip(&vb).zip(&vab) {
        for k in 0..ra.len() {
            worst = worst.max((ra[k] + rb[k] - rab[k]).abs());
            peak = peak.max(rab[k].abs());
        }
    }
    assert!(peak > 1.0, "input too weak to test anything: peak {peak}");
    assert!(worst < 1e-9, "superposition error {worst:e}");
}

#[test]
fn halving_dt_keeps_spike_count() {
    let (t, p) = reservoir(1);
    let input = ecg_input(5.0);
    let run = |dt| simulate(&t, &p, &WeightTable::template(), &input, SimOptions { dt, ..SimOptions::default() }).unwrap().count();
    let (coarse, fine) = (run(1e-4), run(5e-5));
    assert!(coarse > 1000, "reference run too quiet: {coarse} spikes");
    let change = (coarse as f64 - fine as f64).abs() / coarse as f64;
    assert!(change < 0.02, "{coarse} vs {fine} spikes ({:.2} %)", 100.0 * change);
}

#[test]
fn refractory_clamp_over_full_run() {
    let (t, p) = reservoir(2);
    let input = ecg_input(3.0);
    let n = t.n_neurons();
    let mut last = vec![f64::NEG_INFINITY; n];
    let mut violations = Vec::new();
    let mut spikes = 0usize;
    let mut sim = Simulator::new(&t, &p, &WeightTable::template(), SimOptions::default()).unwrap();
    let fired = RefCell::new(Vec::new());
    sim.run(&input, input.duration, |time, k| fired.borrow_mut().push((time, k as usize)), |s| {
        let mut fired = fired.borrow_mut();
        for &(time, k) in fired.iter() {
            if time - last[k] < p[k].refractory - 1e-12 {
                violations.push((k, last[k], time));
            }
            last[k] = time;
            spikes += 1;
        }
        fired.clear();
        // Inside the refractory window the membrane sits at reset.
        for k in 0..n {
            let since = s.time() - last[k];
            if since > 1e-12 && since < p[k].refractory - 1e-12 && s.v()[k] != p[k].v_reset {
                violations.push((k, last[k], s.time()));
            }
        }
    })
    .unwrap();
    assert!(spikes > 100, "only {spikes} spikes");
    assert!(violations.is_empty(), "{} violations, first {:?}", violations.len(), violations[0]);
}

#[test]
fn identical_inputs_identical_records() {
    let (t, p) = reservoir(4);
    let input = ecg_input(1.0);
    let a = simulate(&t, &p, &WeightTable::template(), &input, SimOptions::default()).unwrap();
    let b = simulate(&t, &p, &WeightTable::template(), &input, SimOptions::default()).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lone_neuron_isi_respects_refractory(
        times in prop::collection::vec(0.0f64..0.3, 1..200),
        w in 0.5f64..6.0,
        refractory in 0.001f64..0.01,
    ) {
        let mut times = times;
        times.sort_by(f64::total_cmp);
        let t = lone_neuron();
        let p = NeuronParams { refractory, ..NeuronParams::default() };
        let r = simulate(&t, &[p; 3], &line_weight(w), &up_events(&times, 0, 0.3, 1), SimOptions::default()).unwrap();
        let own = r.neuron_times(0);
        for pair in own.windows(2) {
            prop_assert!(pair[1] - pair[0] >= refractory - 1e-12);
        }
    }

    #[test]
    fn lone_neuron_superposition(
        a in prop::collection::vec(0.0f64..0.2, 0..30),
        b in prop::collection::vec(0.0f64..0.2, 0..30),
    ) {
        let t = lone_neuron();
        let p = [NeuronParams::default(); 3];
        let trace = |times: &[f64]| {
            let mut times = times.to_vec();
            times.sort_by(f64::total_cmp);
            let opts = SimOptions { spiking: false, ..SimOptions::default() };
            let mut sim = Simulator::new(&t, &p, &line_weight(0.7), opts).unwrap();
            let mut v = Vec::new();
            sim.run(&up_events(&times, 0, 0.25, 1), 0.25, |_, _| {}, |s| v.push(s.v()[0])).unwrap();
            v
        };
        let both: Vec<f64> = a.iter().chain(&b).copied().collect();
        let (va, vb, vab) = (trace(&a), trace(&b), trace(&both));
        for k in 0..va.len() {
            prop_assert!((va[k] + vb[k] - vab[k]).abs() < 1e-9);
        }
    }
}
