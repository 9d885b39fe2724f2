//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use ecgres_core::dataset::{EvalRecipe, TrainingRecipe};
use ecgres_core::readout::{FilterKernel, Ridge, DEFAULT_TAU_OUT};
use ecgres_core::simulator::{NeuronParams, PopulationParams, SimOptions, TuneConfig};
use ecgres_core::topology::{BuildMode, WeightTable};
use ecgres_core::wfdb::list_records;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

/// Every random choice has its own seed; none has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub split: u64,
    pub training: u64,
    pub validation: u64,
    pub test: u64,
    pub topology: u64,
    pub mismatch: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Restrict the database to these records (all records when empty).
    pub records: Vec<String>,
    pub split_fractions: [f64; 3],
    pub training_beats: usize,
    /// Segments in the validation and test streams; the full recipes when
    /// unset.
    pub validation_segments: Option<usize>,
    pub test_segments: Option<usize>,
    pub allow_missing_classes: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            records: Vec::new(),
            split_fractions: [0.5, 0.25, 0.25],
            training_beats: TrainingRecipe::full().total(),
            validation_segments: None,
            test_segments: None,
            allow_missing_classes: false,
        }
    }
}

impl DatasetSection {
    pub fn apply_mini(&mut self) {
        self.training_beats = 2_000;
        self.validation_segments = Some(10);
        self.test_segments = Some(10);
        self.allow_missing_classes = true;
    }

    pub fn training_recipe(&self) -> TrainingRecipe {
        let mut r = TrainingRecipe::scaled(self.training_beats);
        r.allow_missing_classes = self.allow_missing_classes;
        r
    }

    pub fn validation_recipe(&self) -> EvalRecipe {
        self.eval_recipe(self.validation_segments, EvalRecipe::validation())
    }

    pub fn test_recipe(&self) -> EvalRecipe {
        self.eval_recipe(self.test_segments, EvalRecipe::test())
    }

    fn eval_recipe(&self, segments: Option<usize>, full: EvalRecipe) -> EvalRecipe {
        let mut r = segments.map_or(full, EvalRecipe::small);
        r.allow_missing_classes |= self.allow_missing_classes;
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    /// Events per second per channel, up and down combined.
    pub target_rate: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection { target_rate: 400.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    pub mode: BuildMode,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection { mode: BuildMode::Free }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorSection {
    pub dt: f64,
    pub mismatch_cv: f64,
    pub max_rate: f64,
    pub base: PopulationParams,
    /// Window of the population rate series, s.
    pub rate_window: f64,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        SimulatorSection {
            dt: SimOptions::default().dt,
            mismatch_cv: 0.2,
            max_rate: SimOptions::default().max_rate,
            base: PopulationParams::default(),
            rate_window: 1.0,
        }
    }
}

impl SimulatorSection {
    pub fn options(&self) -> SimOptions {
        SimOptions {
            dt: self.dt,
            max_rate: self.max_rate,
            ..SimOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    pub enabled: bool,
    /// Leading seconds of the training stream used as tuning input.
    pub sample_s: f64,
    pub initial: WeightTable,
    pub search: TuneConfig,
}

impl Default for TuneSection {
    fn default() -> Self {
        TuneSection {
            enabled: true,
            sample_s: 10.0,
            initial: WeightTable::template(),
            search: TuneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutSection {
    pub tau_out: f64,
    pub sample_period: f64,
    pub ridge: Ridge,
    pub lambda: f64,
    /// Use every n-th state row for training.
    pub train_row_stride: usize,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        ReadoutSection {
            tau_out: DEFAULT_TAU_OUT,
            sample_period: 1.0 / 360.0,
            ridge: Ridge::default(),
            lambda: 1.0,
            train_row_stride: 4,
        }
    }
}

impl ReadoutSection {
    pub fn kernel(&self) -> FilterKernel {
        FilterKernel { tau_out: self.tau_out }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub records_dir: PathBuf,
    /// Excluded from the config hash: where a run lives is not part of what
    /// it computes.
    pub out_dir: PathBuf,
    pub seeds: Seeds,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub simulator: SimulatorSection,
    #[serde(default)]
    pub tune: TuneSection,
    #[serde(default)]
    pub readout: ReadoutSection,
}

/// Records used by the mini preset.
pub const MINI_RECORDS: usize = 3;

impl ExperimentConfig {
    /// Parse TOML; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        for p in [&mut cfg.records_dir, &mut cfg.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// CI-scale preset: the first three selected records, 2,000 training
    /// beats, ten segments per evaluation stream, coarser time step and
    /// training rows.
    pub fn apply_mini(&mut self) -> Result<()> {
        let available = list_records(&self.records_dir).map_err(|e| PipelineError::Config(e.to_string()))?;
        self.dataset.records = self.selected_records(&available).into_iter().take(MINI_RECORDS).collect();
        self.dataset.apply_mini();
        self.simulator.dt = 2e-4;
        self.readout.train_row_stride = 8;
        Ok(())
    }

    pub fn selected_records(&self, available: &[String]) -> Vec<String> {
        if self.dataset.records.is_empty() {
            available.to_vec()
        } else {
            available
                .iter()
                .filter(|r| self.dataset.records.contains(r))
                .cloned()
                .collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !self.records_dir.is_dir() {
            return bad(format!("records_dir {} does not exist", self.records_dir.display()));
        }
        for r in &self.dataset.records {
            if !self.records_dir.join(format!("{r}.hea")).is_file() {
                return bad(format!("record {r} not found in {}", self.records_dir.display()));
            }
        }
        if self.dataset.split_fractions.iter().any(|f| !(*f >= 0.0)) || self.dataset.split_fractions.iter().sum::<f64>() <= 0.0 {
            return bad("split_fractions must be non-negative with a positive sum".into());
        }
        if !(self.encoder.target_rate > 0.0) {
            return bad("encoder.target_rate must be positive".into());
        }
        if !(self.simulator.dt > 0.0) || !(0.0..1.0).contains(&self.simulator.mismatch_cv) {
            return bad("simulator.dt must be positive and mismatch_cv in [0, 1)".into());
        }
        if !(self.tune.sample_s > 0.0) || !(self.simulator.rate_window > 0.0) {
            return bad("tune.sample_s and simulator.rate_window must be positive".into());
        }
        let r = &self.readout;
        if !(r.tau_out > 0.0) || !(r.sample_period > 0.0) || !(r.lambda >= 0.0) || r.train_row_stride == 0 {
            return bad("readout: tau_out, sample_period and train_row_stride must be positive, lambda non-negative".into());
        }
        for p in [&self.simulator.base.input_expansion, &self.simulator.base.excitatory, &self.simulator.base.inhibitory] {
            NeuronParams::validate(p).map_err(PipelineError::Config)?;
        }
        self.tune.initial.validate().map_err(PipelineError::Config)?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, without `out_dir`.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().unwrap().remove("out_dir");
        hash_json(&v)
    }
}

pub fn hash_json(v: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("json serializes")))
}
