//! Clock-driven simulation of the LIF reservoir with exponential synaptic
//! currents.
//!
//! Per neuron, `tau_mem dv/dt = -v + sum_s i_s` and `tau_s di_s/dt = -i_s`,
//! with each arriving event adding `weight * multiplicity` to `i_s`. A step
//! of length `dt` integrates this linear system exactly, so subthreshold
//! trajectories are exact at the step grid. Events (input or recurrent) are
//! applied at the start of the step that contains them; a neuron whose `v`
//! reaches threshold at the end of a step spikes at that time, is reset and
//! clamped for its refractory period. Its spike arrives at the start of the
//! next step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{AerRecord, EventTrain};
use crate::topology::{NetworkTopology, Population, PopulationSizes, SynapseType, WeightTable};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("unstable configuration: neuron {neuron} fired {rate:.0} Hz in the window starting at {window_start:.1} s")]
    UnstableConfig { neuron: usize, rate: f64, window_start: f64 },
    #[error("tuning failed after {iterations} evaluations: {reason}")]
    TuningFailed { iterations: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub tau_mem: f64,
    /// Indexed by [`SynapseType::index`].
    pub tau_syn: [f64; 4],
    pub v_thresh: f64,
    pub v_reset: f64,
    pub refractory: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            tau_mem: 0.020,
            tau_syn: [0.010, 0.100, 0.010, 0.100],
            v_thresh: 1.0,
            v_reset: 0.0,
            refractory: 0.002,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<(), String> {
        let taus_ok = self.tau_mem > 0.0 && self.tau_syn.iter().all(|&t| t > 0.0);
        if !taus_ok || !self.tau_mem.is_finite() {
            return Err("time constants must be positive".into());
        }
        if !(self.v_thresh > self.v_reset) {
            return Err(format!("v_thresh {} must exceed v_reset {}", self.v_thresh, self.v_reset));
        }
        if !(self.refractory >= 0.0) {
            return Err("refractory period must be non-negative".into());
        }
        Ok(())
    }

    pub fn min_tau(&self) -> f64 {
        self.tau_syn.iter().fold(self.tau_mem, |a, &b| a.min(b))
    }
}

/// Base parameters per population, one per chip core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PopulationParams {
    pub input_expansion: NeuronParams,
    pub excitatory: NeuronParams,
    pub inhibitory: NeuronParams,
}

impl PopulationParams {
    pub fn get(&self, p: Population) -> &NeuronParams {
        match p {
            Population::InputExpansion => &self.input_expansion,
            Population::Excitatory => &self.excitatory,
            Population::Inhibitory => &self.inhibitory,
        }
    }
}

/// Multiply every parameter of `n` copies of `base` by independent
/// log-normal factors with unit median and coefficient of variation `cv`.
pub fn inject_mismatch(base: &NeuronParams, n: usize, cv: f64, seed: u64) -> Vec<NeuronParams> {
    assert!((0.0..1.0).contains(&cv), "cv must lie in [0, 1)");
    if cv == 0.0 {
        return vec![*base; n];
    }
    let sigma = (1.0 + cv * cv).ln().sqrt();
    let law = LogNormal::new(0.0, sigma).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut p = *base;
            p.tau_mem *= law.sample(&mut rng);
            for t in &mut p.tau_syn {
                *t *= law.sample(&mut rng);
            }
            p.v_thresh *= law.sample(&mut rng);
            p.v_reset *= law.sample(&mut rng);
            p.refractory *= law.sample(&mut rng);
            p
        })
        .collect()
}

/// Per-neuron parameters for a whole network, each population seeded
/// separately from `seed`.
pub fn network_params(sizes: &PopulationSizes, base: &PopulationParams, cv: f64, seed: u64) -> Vec<NeuronParams> {
    Population::ALL
        .iter()
        .flat_map(|&p| {
            let sub = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(p.index() as u64 + 1);
            inject_mismatch(base.get(p), sizes.size(p), cv, sub)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dt: f64,
    /// Per-neuron rate, Hz, above which a run aborts as runaway.
    pub max_rate: f64,
    /// Window over which `max_rate` is checked, s.
    pub rate_window: f64,
    /// Disable thresholding (subthreshold dynamics only).
    pub spiking: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dt: 1e-4,
            max_rate: 400.0,
            rate_window: 1.0,
            spiking: true,
        }
    }
}

/// Sorted spikes of all neurons.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpikeRecord {
    pub spikes: Vec<(f64, u32)>,
    pub duration: f64,
    pub n_neurons: usize,
}

impl SpikeRecord {
    pub fn count(&self) -> usize {
        self.spikes.len()
    }

    pub fn neuron_times(&self, neuron: u32) -> Vec<f64> {
        self.spikes.iter().filter(|s| s.1 == neuron).map(|s| s.0).collect()
    }

    pub fn to_records(&self) -> Vec<AerRecord> {
        self.spikes
            .iter()
            .map(|&(time, source)| AerRecord { time, source, meta: 0 })
            .collect()
    }

    pub fn from_records(records: &[AerRecord], duration: f64, n_neurons: usize) -> Self {
        SpikeRecord {
            spikes: records.iter().map(|r| (r.time, r.source)).collect(),
            duration,
            n_neurons,
        }
    }
}

/// Compressed outgoing adjacency: for each source, targets with their
/// synapse type and effective weight.
#[derive(Debug, Clone)]
struct FanOut {
    offsets: Vec<usize>,
    post: Vec<u32>,
    ty: Vec<u8>,
    weight: Vec<f64>,
}

impl FanOut {
    fn build(n_sources: usize, edges: impl Iterator<Item = (usize, u32, u8, f64)>) -> Self {
        let mut list: Vec<_> = edges.filter(|e| e.3 != 0.0).collect();
        list.sort_by_key(|e| (e.0, e.1, e.2));
        let mut offsets = vec![0usize; n_sources + 1];
        for e in &list {
            offsets[e.0 + 1] += 1;
        }
        for k in 0..n_sources {
            offsets[k + 1] += offsets[k];
        }
        FanOut {
            offsets,
            post: list.iter().map(|e| e.1).collect(),
            ty: list.iter().map(|e| e.2).collect(),
            weight: list.iter().map(|e| e.3).collect(),
        }
    }

    #[inline]
    fn targets(&self, src: usize) -> std::ops::Range<usize> {
        self.offsets[src]..self.offsets[src + 1]
    }
}

/// Exact one-step coupling from a synaptic current to the membrane:
/// `tau_s / (tau_s - tau_m) * (exp(-dt/tau_s) - exp(-dt/tau_m))`, written to
/// stay accurate as `tau_s` approaches `tau_m`.
pub fn coupling(dt: f64, tau_mem: f64, tau_syn: f64) -> f64 {
    let x = dt * (tau_syn - tau_mem) / (tau_syn * tau_mem);
    let ratio = if x.abs() < 1e-12 { 1.0 + 0.5 * x } else { x.exp_m1() / x };
    dt / tau_mem * (-dt / tau_mem).exp() * ratio
}

/// Stepper holding the network state.
pub struct Simulator {
    n: usize,
    dt: f64,
    opts: SimOptions,
    step: u64,
    v: Vec<f64>,
    /// `i[s * n + k]`: current of synapse type `s` on neuron `k`.
    i: Vec<f64>,
    decay_m: Vec<f64>,
    decay_s: Vec<f64>,
    couple: Vec<f64>,
    v_thresh: Vec<f64>,
    v_reset: Vec<f64>,
    ref_steps: Vec<u32>,
    ref_left: Vec<u32>,
    recurrent: FanOut,
    lines: FanOut,
    /// Synapse types that receive any input.
    active: Vec<usize>,
    pending: Vec<u32>,
    window_counts: Vec<u32>,
    window_index: u64,
}

impl Simulator {
    pub fn new(
        topology: &NetworkTopology,
        params: &[NeuronParams],
        weights: &WeightTable,
        opts: SimOptions,
    ) -> Result<Self, SimError> {
        let n = topology.n_neurons();
        let dt = opts.dt;
        if params.len() != n {
            return Err(SimError::InvalidConfig(format!("{} parameter sets for {n} neurons", params.len())));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SimError::InvalidConfig("dt must be positive".into()));
        }
        for p in params {
            p.validate().map_err(SimError::InvalidConfig)?;
        }
        let min_tau = params.iter().map(|p| p.min_tau()).fold(f64::INFINITY, f64::min);
        if dt > min_tau / 10.0 * (1.0 + 1e-9) {
            return Err(SimError::InvalidConfig(format!("dt {dt} exceeds a tenth of the smallest time constant {min_tau}")));
        }
        if !(opts.max_rate > 0.0 && opts.rate_window > 0.0) {
            return Err(SimError::InvalidConfig("max rate and its window must be positive".into()));
        }
        weights.validate().map_err(SimError::InvalidConfig)?;

        let mut decay_s = vec![0.0; 4 * n];
        let mut couple = vec![0.0; 4 * n];
        for (k, p) in params.iter().enumerate() {
            for s in 0..4 {
                decay_s[s * n + k] = (-dt / p.tau_syn[s]).exp();
                couple[s * n + k] = coupling(dt, p.tau_mem, p.tau_syn[s]);
            }
        }
        let sizes = topology.populations;
        let w = |post: usize, ty: SynapseType| weights.get(sizes.population_of(post), ty);
        let recurrent = FanOut::build(
            n,
            topology.connections.iter().map(|c| {
                let post = c.post as usize;
                (c.pre as usize, c.post, c.synapse_type.index() as u8, w(post, c.synapse_type) * c.multiplicity as f64)
            }),
        );
        let line_type = topology.config.line_type;
        let lines = FanOut::build(
            topology.n_input_lines(),
            topology.input_map.iter().enumerate().map(|(k, b)| {
                (b.line as usize, k as u32, line_type.index() as u8, w(k, line_type) * b.multiplicity as f64)
            }),
        );
        let mut active: Vec<usize> = recurrent.ty.iter().chain(&lines.ty).map(|&t| t as usize).collect();
        active.sort_unstable();
        active.dedup();
        Ok(Simulator {
            n,
            dt,
            opts,
            step: 0,
            v: params.iter().map(|p| p.v_reset).collect(),
            i: vec![0.0; 4 * n],
            decay_m: params.iter().map(|p| (-dt / p.tau_mem).exp()).collect(),
            decay_s,
            couple,
            v_thresh: params.iter().map(|p| p.v_thresh).collect(),
            v_reset: params.iter().map(|p| p.v_reset).collect(),
            ref_steps: params.iter().map(|p| (p.refractory / dt - 1e-9).ceil().max(0.0) as u32).collect(),
            ref_left: vec![0; n],
            recurrent,
            lines,
            active,
            pending: Vec::new(),
            window_counts: vec![0; n],
            window_index: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn current(&self, ty: SynapseType, neuron: usize) -> f64 {
        self.i[ty.index() * self.n + neuron]
    }

    fn deliver(&mut self, fan: bool, src: usize) {
        let table = if fan { &self.recurrent } else { &self.lines };
        for e in table.targets(src) {
            self.i[table.ty[e] as usize * self.n + table.post[e] as usize] += table.weight[e];
        }
    }

    /// Advance one step. `input_lines` are the lines with an event in this
    /// step (repeated per event). Spiking neurons are passed to `on_spike`
    /// with the spike time.
    pub fn advance(&mut self, input_lines: &[u32], on_spike: &mut impl FnMut(f64, u32)) -> Result<(), SimError> {
        let pending = std::mem::take(&mut self.pending);
        for &src in &pending {
            self.deliver(true, src as usize);
        }
        self.pending = pending;
        self.pending.clear();
        for &line in input_lines {
            if (line as usize) < self.lines.offsets.len() - 1 {
                self.deliver(false, line as usize);
            }
        }

        let n = self.n;
        for (v, d) in self.v.iter_mut().zip(&self.decay_m) {
            *v *= d;
        }
        for &s in &self.active {
            let range = s * n..(s + 1) * n;
            let (cur, couple, decay) = (&mut self.i[range.clone()], &self.couple[range.clone()], &self.decay_s[range]);
            for k in 0..n {
                self.v[k] += cur[k] * couple[k];
                cur[k] *= decay[k];
            }
        }
        for k in 0..n {
            if self.ref_left[k] > 0 {
                self.ref_left[k] -= 1;
                self.v[k] = self.v_reset[k];
            }
        }
        self.step += 1;
        let t = self.time();

        let window = (t / self.opts.rate_window - 1e-9).floor().max(0.0) as u64;
        if window != self.window_index {
            self.window_index = window;
            self.window_counts.iter_mut().for_each(|c| *c = 0);
        }
        if self.opts.spiking {
            let limit = self.opts.max_rate * self.opts.rate_window;
            for k in 0..n {
                if self.v[k] >= self.v_thresh[k] {
                    self.v[k] = self.v_reset[k];
                    self.ref_left[k] = self.ref_steps[k];
                    self.pending.push(k as u32);
                    on_spike(t, k as u32);
                    self.window_counts[k] += 1;
                    if self.window_counts[k] as f64 > limit {
                        return Err(SimError::UnstableConfig {
                            neuron: k,
                            rate: self.window_counts[k] as f64 / self.opts.rate_window,
                            window_start: window as f64 * self.opts.rate_window,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Run until `duration`, feeding `input` (sorted by time) and calling
    /// `on_step` after every step.
    pub fn run(
        &mut self,
        input: &EventTrain,
        duration: f64,
        mut on_spike: impl FnMut(f64, u32),
        mut on_step: impl FnMut(&Simulator),
    ) -> Result<(), SimError> {
        let n_steps = (duration / self.dt - 1e-9).ceil().max(0.0) as u64;
        let mut next = input.events.partition_point(|e| e.time < self.time());
        let mut lines = Vec::new();
        for _ in 0..n_steps {
            let end = (self.step + 1) as f64 * self.dt;
            lines.clear();
            while next < input.events.len() && input.events[next].time < end {
                lines.push(input.events[next].line());
                next += 1;
            }
            self.advance(&lines, &mut on_spike)?;
            on_step(self);
        }
        Ok(())
    }
}

/// Simulate the network on `input` for `duration` seconds (at least the
/// input duration) and collect every spike.
pub fn simulate(
    topology: &NetworkTopology,
    params: &[NeuronParams],
    weights: &WeightTable,
    input: &EventTrain,
    opts: SimOptions,
) -> Result<SpikeRecord, SimError> {
    simulate_for(topology, params, weights, input, input.duration, opts)
}

pub fn simulate_for(
    topology: &NetworkTopology,
    params: &[NeuronParams],
    weights: &WeightTable,
    input: &EventTrain,
    duration: f64,
    opts: SimOptions,
) -> Result<SpikeRecord, SimError> {
    let mut sim = Simulator::new(topology, params, weights, opts)?;
    let mut spikes = Vec::new();
    sim.run(input, duration, |t, k| spikes.push((t, k)), |_| {})?;
    Ok(SpikeRecord {
        spikes,
        duration,
        n_neurons: topology.n_neurons(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub window: f64,
    pub window_starts: Vec<f64>,
    /// Mean per-neuron rate, Hz, indexed `[population][window]`.
    pub rates: [Vec<f64>; 3],
}

impl RateReport {
    pub fn mean(&self, p: Population) -> f64 {
        let r = &self.rates[p.index()];
        if r.is_empty() {
            0.0
        } else {
            r.iter().sum::<f64>() / r.len() as f64
        }
    }
}

/// Streaming per-population spike counts over fixed windows.
#[derive(Debug, Clone)]
pub struct RateCounter {
    sizes: PopulationSizes,
    window: f64,
    duration: f64,
    counts: [Vec<usize>; 3],
}

impl RateCounter {
    pub fn new(sizes: PopulationSizes, window: f64, duration: f64) -> Self {
        assert!(window > 0.0, "window must be positive");
        let n_windows = (duration / window - 1e-9).ceil().max(0.0) as usize;
        RateCounter {
            sizes,
            window,
            duration,
            counts: [vec![0; n_windows], vec![0; n_windows], vec![0; n_windows]],
        }
    }

    pub fn add(&mut self, t: f64, neuron: u32) {
        let n_windows = self.counts[0].len();
        if n_windows == 0 {
            return;
        }
        // Spikes land on step ends; one exactly at the duration belongs to
        // the last window.
        let w = ((t / self.window - 1e-9).ceil() as usize).saturating_sub(1).min(n_windows - 1);
        self.counts[self.sizes.population_of(neuron as usize).index()][w] += 1;
    }

    pub fn finish(self) -> RateReport {
        let n_windows = self.counts[0].len();
        let rates = Population::ALL.map(|p| {
            let size = self.sizes.size(p).max(1) as f64;
            (0..n_windows)
                .map(|w| {
                    let len = (self.duration - w as f64 * self.window).min(self.window);
                    self.counts[p.index()][w] as f64 / size / len
                })
                .collect()
        });
        RateReport {
            window: self.window,
            window_starts: (0..n_windows).map(|w| w as f64 * self.window).collect(),
            rates,
        }
    }
}

/// Boxcar-windowed mean firing rate per population.
pub fn rate_report(record: &SpikeRecord, sizes: &PopulationSizes, window: f64) -> RateReport {
    let mut counter = RateCounter::new(*sizes, window, record.duration);
    for &(t, k) in &record.spikes {
        counter.add(t, k);
    }
    counter.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    /// Target mean excitatory rate during stimulation, Hz.
    pub exc_band: (f64, f64),
    /// Reservoir rate that counts as quiet, Hz.
    pub quiet_rate: f64,
    /// Time after input ends by which the reservoir must be quiet, s.
    pub settle: f64,
    /// Length of the window in which quietness is measured, s.
    pub quiet_window: f64,
    pub max_evaluations: usize,
    /// Largest inhibition gain relative to the starting table.
    pub max_inhibition_gain: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            exc_band: (5.0, 20.0),
            quiet_rate: 1.0,
            settle: 1.0,
            quiet_window: 1.0,
            max_evaluations: 40,
            max_inhibition_gain: 16.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeCheck {
    /// Mean excitatory rate while input is present, Hz.
    pub exc_rate: f64,
    /// Mean reservoir rate in the quiet window, Hz.
    pub tail_rate: f64,
    /// Set when the run aborted as runaway.
    pub unstable: bool,
}

impl EdgeCheck {
    pub fn satisfied(&self, cfg: &TuneConfig) -> bool {
        !self.unstable
            && self.exc_rate >= cfg.exc_band.0
            && self.exc_rate <= cfg.exc_band.1
            && self.tail_rate < cfg.quiet_rate
    }
}

/// Run `input` followed by silence and measure both tuning criteria.
pub fn check_edge(
    topology: &NetworkTopology,
    params: &[NeuronParams],
    weights: &WeightTable,
    input: &EventTrain,
    cfg: &TuneConfig,
    opts: SimOptions,
) -> Result<EdgeCheck, SimError> {
    let d = input.duration;
    let quiet_start = d + cfg.settle;
    let total = quiet_start + cfg.quiet_window;
    let sizes = topology.populations;
    let exc = sizes.range(Population::Excitatory);
    let inh_end = sizes.total();
    let (mut stim, mut tail) = (0usize, 0usize);
    let mut sim = Simulator::new(topology, params, weights, opts)?;
    let outcome = sim.run(
        input,
        total,
        |t, k| {
            let k = k as usize;
            if t <= d && exc.contains(&k) {
                stim += 1;
            }
            if t > quiet_start && k >= exc.start && k < inh_end {
                tail += 1;
            }
        },
        |_| {},
    );
    match outcome {
        Ok(()) => Ok(EdgeCheck {
            exc_rate: stim as f64 / exc.len() as f64 / d.max(f64::MIN_POSITIVE),
            tail_rate: tail as f64 / (inh_end - exc.start) as f64 / cfg.quiet_window,
            unstable: false,
        }),
        Err(SimError::UnstableConfig { .. }) => Ok(EdgeCheck {
            exc_rate: f64::INFINITY,
            tail_rate: f64::INFINITY,
            unstable: true,
        }),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub weights: WeightTable,
    pub excitation_gain: f64,
    pub inhibition_gain: f64,
    pub evaluations: usize,
    pub check: EdgeCheck,
}

fn scaled(base: &WeightTable, g_exc: f64, g_inh: f64) -> WeightTable {
    let mut w = base.clone();
    for p in [Population::Excitatory, Population::Inhibitory] {
        for s in SynapseType::ALL {
            let g = if s.is_excitatory() { g_exc } else { g_inh };
            w.set(p, s, base.get(p, s) * g);
        }
    }
    w
}

/// Coordinate search over one excitation and one inhibition gain applied to
/// the reservoir weights. Excitation is bisected (geometrically) into the
/// rate band; runaway or persistent activity raises inhibition first and
/// lowers excitation once inhibition is saturated. Zero entries are taken
/// from [`WeightTable::template`].
pub fn tune_to_edge(
    topology: &NetworkTopology,
    params: &[NeuronParams],
    initial: &WeightTable,
    input: &EventTrain,
    cfg: &TuneConfig,
    opts: SimOptions,
) -> Result<TuneOutcome, SimError> {
    if input.duration <= 0.0 {
        return Err(SimError::InvalidConfig("tuning input is empty".into()));
    }
    let first = check_edge(topology, params, initial, input, cfg, opts)?;
    if first.satisfied(cfg) {
        return Ok(TuneOutcome {
            weights: initial.clone(),
            excitation_gain: 1.0,
            inhibition_gain: 1.0,
            evaluations: 1,
            check: first,
        });
    }

    let template = WeightTable::template();
    let mut base = initial.clone();
    for p in Population::ALL {
        for s in SynapseType::ALL {
            if base.get(p, s) == 0.0 {
                base.set(p, s, template.get(p, s));
            }
        }
    }
    let (mut g_e, mut g_i) = (1.0f64, 1.0f64);
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut last = first;
    for evaluation in 2..=cfg.max_evaluations {
        let w = scaled(&base, g_e, g_i);
        let c = check_edge(topology, params, &w, input, cfg, opts)?;
        if c.satisfied(cfg) {
            return Ok(TuneOutcome {
                weights: w,
                excitation_gain: g_e,
                inhibition_gain: g_i,
                evaluations: evaluation,
                check: c,
            });
        }
        let runaway = c.unstable || c.tail_rate >= cfg.quiet_rate;
        if runaway && g_i < cfg.max_inhibition_gain {
            g_i = (g_i * 2.0).min(cfg.max_inhibition_gain);
        } else if runaway || c.exc_rate > cfg.exc_band.1 {
            hi = g_e;
            g_e = if lo > 0.0 { (lo * hi).sqrt() } else { g_e / 2.0 };
        } else {
            lo = g_e;
            g_e = if hi.is_finite() { (lo * hi).sqrt() } else { g_e * 2.0 };
        }
        last = c;
        if hi.is_finite() && lo > 0.0 && hi / lo < 1.0 + 1e-6 {
            break;
        }
    }
    Err(SimError::TuningFailed {
        iterations: cfg.max_evaluations,
        reason: format!(
            "last check: excitatory {:.2} Hz, tail {:.2} Hz{}",
            last.exc_rate,
            last.tail_rate,
            if last.unstable { ", runaway" } else { "" }
        ),
    })
}
