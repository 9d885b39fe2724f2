//! Random three-population reservoir: a feed-forward input expansion layer,
//! a recurrent excitatory population and a feed-forward inhibitory one.
//!
//! Neuron ids are global: input expansion first, then excitatory, then
//! inhibitory (0..128, 128..640, 640..768 with the default sizes). Input
//! lines (encoder channel/polarity pairs) have their own id space.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TOPOLOGY_VERSION: u32 = 1;
/// Presynaptic slots per neuron on the target hardware.
pub const HARDWARE_FAN_IN: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("infeasible constraint: {0}")]
    InfeasibleConstraint(String),
    #[error("invalid topology config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynapseType {
    ExcFast,
    ExcSlow,
    InhFast,
    InhSlow,
}

impl SynapseType {
    pub const ALL: [SynapseType; 4] = [
        SynapseType::ExcFast,
        SynapseType::ExcSlow,
        SynapseType::InhFast,
        SynapseType::InhSlow,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_excitatory(self) -> bool {
        matches!(self, SynapseType::ExcFast | SynapseType::ExcSlow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    InputExpansion,
    Excitatory,
    Inhibitory,
}

impl Population {
    pub const ALL: [Population; 3] = [Population::InputExpansion, Population::Excitatory, Population::Inhibitory];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Population::InputExpansion => "in",
            Population::Excitatory => "exc",
            Population::Inhibitory => "inh",
        }
    }
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    Free,
    HardwareFidelity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationSizes {
    pub input_expansion: usize,
    pub excitatory: usize,
    pub inhibitory: usize,
}

impl Default for PopulationSizes {
    fn default() -> Self {
        PopulationSizes {
            input_expansion: 128,
            excitatory: 512,
            inhibitory: 128,
        }
    }
}

impl PopulationSizes {
    pub fn total(&self) -> usize {
        self.input_expansion + self.excitatory + self.inhibitory
    }

    pub fn size(&self, p: Population) -> usize {
        match p {
            Population::InputExpansion => self.input_expansion,
            Population::Excitatory => self.excitatory,
            Population::Inhibitory => self.inhibitory,
        }
    }

    pub fn range(&self, p: Population) -> Range<usize> {
        match p {
            Population::InputExpansion => 0..self.input_expansion,
            Population::Excitatory => self.input_expansion..self.input_expansion + self.excitatory,
            Population::Inhibitory => self.input_expansion + self.excitatory..self.total(),
        }
    }

    pub fn population_of(&self, neuron: usize) -> Population {
        if neuron < self.input_expansion {
            Population::InputExpansion
        } else if neuron < self.input_expansion + self.excitatory {
            Population::Excitatory
        } else {
            Population::Inhibitory
        }
    }
}

/// Fan-in per pathway and the synapse type each pathway uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub sizes: PopulationSizes,
    pub n_input_lines: usize,
    pub max_input_multiplicity: usize,
    pub in_to_exc: usize,
    pub exc_to_exc: usize,
    pub inh_to_exc: usize,
    pub exc_to_inh: usize,
    pub line_type: SynapseType,
    pub in_to_exc_type: SynapseType,
    pub exc_to_exc_type: SynapseType,
    pub inh_to_exc_type: SynapseType,
    pub exc_to_inh_type: SynapseType,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            sizes: PopulationSizes::default(),
            n_input_lines: 4,
            max_input_multiplicity: 64,
            in_to_exc: 16,
            exc_to_exc: 32,
            inh_to_exc: 16,
            exc_to_inh: 64,
            line_type: SynapseType::ExcFast,
            in_to_exc_type: SynapseType::ExcFast,
            exc_to_exc_type: SynapseType::ExcFast,
            inh_to_exc_type: SynapseType::InhFast,
            exc_to_inh_type: SynapseType::ExcFast,
        }
    }
}

impl TopologyConfig {
    fn validate(&self, mode: BuildMode) -> Result<(), TopologyError> {
        let s = &self.sizes;
        let bad = |m: String| Err(TopologyError::InvalidConfig(m));
        if s.input_expansion == 0 || s.excitatory == 0 || s.inhibitory == 0 {
            return bad("all populations need at least one neuron".into());
        }
        if self.n_input_lines == 0 || self.max_input_multiplicity == 0 {
            return bad("input lines and multiplicity must be positive".into());
        }
        if self.exc_to_exc > 0 && s.excitatory < 2 {
            return bad("exc->exc needs two excitatory neurons".into());
        }
        for (name, ty, exc) in [
            ("line", self.line_type, true),
            ("in->exc", self.in_to_exc_type, true),
            ("exc->exc", self.exc_to_exc_type, true),
            ("inh->exc", self.inh_to_exc_type, false),
            ("exc->inh", self.exc_to_inh_type, true),
        ] {
            if ty.is_excitatory() != exc {
                return bad(format!("{name} pathway has a synapse type of the wrong sign"));
            }
        }
        if mode == BuildMode::HardwareFidelity {
            let exc_slots = self.in_to_exc + self.exc_to_exc + self.inh_to_exc;
            for (who, slots) in [
                ("excitatory", exc_slots),
                ("inhibitory", self.exc_to_inh),
                ("input expansion", self.max_input_multiplicity),
            ] {
                if slots > HARDWARE_FAN_IN {
                    return Err(TopologyError::InfeasibleConstraint(format!(
                        "{who} neurons need {slots} presynaptic slots, hardware has {HARDWARE_FAN_IN}"
                    )));
                }
            }
            for (name, k, pool) in [
                ("in->exc", self.in_to_exc, s.input_expansion),
                ("exc->exc", self.exc_to_exc, s.excitatory - 1),
                ("inh->exc", self.inh_to_exc, s.inhibitory),
                ("exc->inh", self.exc_to_inh, s.excitatory),
            ] {
                if k > pool {
                    return Err(TopologyError::InfeasibleConstraint(format!(
                        "{name} needs {k} distinct sources from {pool} neurons"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connection {
    pub pre: u32,
    pub post: u32,
    pub synapse_type: SynapseType,
    pub multiplicity: u32,
}

/// Which encoder line drives an input expansion neuron, and how strongly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputBinding {
    pub line: u32,
    pub multiplicity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub version: u32,
    pub seed: u64,
    pub mode: BuildMode,
    pub config: TopologyConfig,
    pub populations: PopulationSizes,
    /// Sorted by (post, pre, synapse type).
    pub connections: Vec<Connection>,
    pub input_map: Vec<InputBinding>,
}

impl NetworkTopology {
    pub fn n_neurons(&self) -> usize {
        self.populations.total()
    }

    pub fn n_input_lines(&self) -> usize {
        self.config.n_input_lines
    }

    /// In-degree (counting multiplicity) of `post` from population `from`.
    pub fn in_degree(&self, post: usize, from: Population) -> usize {
        self.connections
            .iter()
            .filter(|c| c.post as usize == post && self.populations.population_of(c.pre as usize) == from)
            .map(|c| c.multiplicity as usize)
            .sum()
    }

    /// In-degree table `[post][from population]` over all neurons.
    pub fn in_degrees(&self) -> Vec<[usize; 3]> {
        let mut deg = vec![[0usize; 3]; self.n_neurons()];
        for c in &self.connections {
            deg[c.post as usize][self.populations.population_of(c.pre as usize).index()] += c.multiplicity as usize;
        }
        deg
    }

    /// Distinct presynaptic sources per neuron, input lines included.
    pub fn distinct_sources(&self) -> Vec<usize> {
        let mut n = vec![0usize; self.n_neurons()];
        for c in &self.connections {
            n[c.post as usize] += 1;
        }
        for k in 0..self.input_map.len() {
            n[k] += 1;
        }
        n
    }

    /// Synapse slots per neuron (connections counted with multiplicity).
    pub fn synapse_slots(&self) -> Vec<usize> {
        let mut n = vec![0usize; self.n_neurons()];
        for c in &self.connections {
            n[c.post as usize] += c.multiplicity as usize;
        }
        for (k, b) in self.input_map.iter().enumerate() {
            n[k] += b.multiplicity as usize;
        }
        n
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let t: NetworkTopology = serde_json::from_str(s).map_err(|e| e.to_string())?;
        if t.version != TOPOLOGY_VERSION {
            return Err(format!("unsupported topology version {}", t.version));
        }
        Ok(t)
    }
}

/// Draw `k` sources from `pool` (skipping `exclude`) and merge duplicates.
fn draw_sources(
    rng: &mut ChaCha8Rng,
    pool: Range<usize>,
    exclude: Option<usize>,
    k: usize,
    distinct: bool,
) -> BTreeMap<usize, u32> {
    let mut out = BTreeMap::new();
    let n = pool.len() - usize::from(exclude.is_some_and(|e| pool.contains(&e)));
    let map = |i: usize| {
        let id = pool.start + i;
        match exclude {
            Some(e) if pool.contains(&e) && id >= e => id + 1,
            _ => id,
        }
    };
    if distinct {
        for i in sample(rng, n, k) {
            *out.entry(map(i)).or_insert(0) += 1;
        }
    } else {
        for _ in 0..k {
            *out.entry(map(rng.random_range(0..n))).or_insert(0) += 1;
        }
    }
    out
}

/// Build a random network. Free mode draws afferents uniformly with
/// replacement; hardware fidelity draws distinct sources and checks the
/// per-neuron slot limit.
pub fn build(seed: u64, mode: BuildMode) -> Result<NetworkTopology, TopologyError> {
    build_with(&TopologyConfig::default(), seed, mode)
}

pub fn build_with(cfg: &TopologyConfig, seed: u64, mode: BuildMode) -> Result<NetworkTopology, TopologyError> {
    cfg.validate(mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = cfg.sizes;
    let distinct = mode == BuildMode::HardwareFidelity;

    let input_map = (0..sizes.input_expansion)
        .map(|_| InputBinding {
            line: rng.random_range(0..cfg.n_input_lines) as u32,
            multiplicity: rng.random_range(1..=cfg.max_input_multiplicity) as u32,
        })
        .collect();

    let mut connections = Vec::new();
    let push = |post: usize, sources: BTreeMap<usize, u32>, ty: SynapseType, out: &mut Vec<Connection>| {
        for (pre, m) in sources {
            out.push(Connection {
                pre: pre as u32,
                post: post as u32,
                synapse_type: ty,
                multiplicity: m,
            });
        }
    };
    for post in sizes.range(Population::Excitatory) {
        let from_in = draw_sources(&mut rng, sizes.range(Population::InputExpansion), None, cfg.in_to_exc, distinct);
        let from_exc = draw_sources(&mut rng, sizes.range(Population::Excitatory), Some(post), cfg.exc_to_exc, distinct);
        let from_inh = draw_sources(&mut rng, sizes.range(Population::Inhibitory), None, cfg.inh_to_exc, distinct);
        push(post, from_in, cfg.in_to_exc_type, &mut connections);
        push(post, from_exc, cfg.exc_to_exc_type, &mut connections);
        push(post, from_inh, cfg.inh_to_exc_type, &mut connections);
    }
    for post in sizes.range(Population::Inhibitory) {
        let from_exc = draw_sources(&mut rng, sizes.range(Population::Excitatory), None, cfg.exc_to_inh, distinct);
        push(post, from_exc, cfg.exc_to_inh_type, &mut connections);
    }
    connections.sort_by_key(|c| (c.post, c.pre, c.synapse_type));

    Ok(NetworkTopology {
        version: TOPOLOGY_VERSION,
        seed,
        mode,
        config: cfg.clone(),
        populations: sizes,
        connections,
        input_map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEntry {
    pub from: Population,
    pub to: Population,
    pub mean_in_degree: f64,
    /// Mean in-degree over the size of the source population.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub entries: Vec<DensityEntry>,
    pub notes: Vec<String>,
}

impl ConnectivityReport {
    pub fn density(&self, from: Population, to: Population) -> f64 {
        self.entries
            .iter()
            .find(|e| e.from == from && e.to == to)
            .map_or(0.0, |e| e.density)
    }
}

impl fmt::Display for ConnectivityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(f, "{:>4} -> {:<4} {:>7.3} %  (mean in-degree {:.2})", e.from, e.to, 100.0 * e.density, e.mean_in_degree)?;
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        Ok(())
    }
}

const PATHWAYS: [(Population, Population); 4] = [
    (Population::InputExpansion, Population::Excitatory),
    (Population::Excitatory, Population::Excitatory),
    (Population::Excitatory, Population::Inhibitory),
    (Population::Inhibitory, Population::Excitatory),
];

pub fn connectivity_report(t: &NetworkTopology) -> ConnectivityReport {
    let deg = t.in_degrees();
    let entries = PATHWAYS
        .iter()
        .map(|&(from, to)| {
            let posts = t.populations.range(to);
            let n_post = posts.len();
            let total: usize = posts.map(|p| deg[p][from.index()]).sum();
            let mean = if n_post == 0 { 0.0 } else { total as f64 / n_post as f64 };
            let n_from = t.populations.size(from);
            DensityEntry {
                from,
                to,
                mean_in_degree: mean,
                density: if n_from == 0 { 0.0 } else { mean / n_from as f64 },
            }
        })
        .collect::<Vec<_>>();
    let inh = entries[3].density;
    let notes = vec![format!(
        "inh -> exc density {:.2} % follows the inhibitory fan-in; a 3.1 % density would mean about 4 inhibitory afferents per excitatory neuron",
        100.0 * inh
    )];
    ConnectivityReport { entries, notes }
}

/// Shared synaptic efficacy per (post population, synapse type).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    /// Indexed `[population][synapse type]`.
    pub weights: [[f64; 4]; 3],
}

impl WeightTable {
    pub fn zero() -> Self {
        WeightTable { weights: [[0.0; 4]; 3] }
    }

    /// Starting point for tuning: input neurons fire on QRS bursts of their
    /// line, the reservoir is weakly driven.
    pub fn template() -> Self {
        let mut w = WeightTable::zero();
        w.set(Population::InputExpansion, SynapseType::ExcFast, 0.1);
        w.set(Population::InputExpansion, SynapseType::ExcSlow, 0.05);
        w.set(Population::Excitatory, SynapseType::ExcFast, 0.5);
        w.set(Population::Excitatory, SynapseType::ExcSlow, 0.25);
        w.set(Population::Excitatory, SynapseType::InhFast, -1.0);
        w.set(Population::Excitatory, SynapseType::InhSlow, -0.5);
        w.set(Population::Inhibitory, SynapseType::ExcFast, 0.3);
        w.set(Population::Inhibitory, SynapseType::ExcSlow, 0.15);
        w
    }

    pub fn get(&self, p: Population, s: SynapseType) -> f64 {
        self.weights[p.index()][s.index()]
    }

    pub fn set(&mut self, p: Population, s: SynapseType, w: f64) {
        self.weights[p.index()][s.index()] = w;
    }

    pub fn validate(&self) -> Result<(), String> {
        for p in Population::ALL {
            for s in SynapseType::ALL {
                let w = self.get(p, s);
                if !w.is_finite() || (s.is_excitatory() && w < 0.0) || (!s.is_excitatory() && w > 0.0) {
                    return Err(format!("weight {p}/{s:?} = {w} has the wrong sign"));
                }
            }
        }
        Ok(())
    }
}
