//! Spiking reservoir ECG anomaly detection: WFDB ingestion, dataset
//! assembly, sigma-delta encoding, LIF reservoir simulation, linear readout
//! and evaluation.

pub mod dataset;
pub mod encoder;
pub mod eval;
pub mod events;
pub mod readout;
pub mod simulator;
pub mod topology;
pub mod wfdb;
