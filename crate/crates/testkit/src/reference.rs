//! Reference dumps of WFDB records produced by an independent reader
//! (`tests/data/mitdb/make_reference.py`) and the comparison against a
//! decoded record.

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Deserialize)]
pub struct Reference {
    pub record_name: String,
    pub n_channels: usize,
    pub sampling_rate: f64,
    pub n_samples: usize,
    pub gain: Vec<f64>,
    pub baseline: Vec<i32>,
    pub checksum: Vec<i32>,
    pub digital_sha256: String,
    pub digital_sum: Vec<i64>,
    pub digital_head: Vec<Vec<i16>>,
    pub digital_tail: Vec<Vec<i16>>,
    pub stride: usize,
    pub digital_strided: Vec<Vec<i16>>,
    pub physical_strided: Vec<Vec<f64>>,
    /// `[sample, symbol, code]`.
    pub annotations: Vec<(usize, String, u8)>,
}

impl Reference {
    pub fn load(path: &Path) -> Result<Self, String> {
        let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// What a parser produced for one record.
pub struct Decoded<'a> {
    pub n_channels: usize,
    pub sampling_rate: f64,
    pub gain: Vec<f64>,
    pub baseline: Vec<i32>,
    /// Frame-major ADC values.
    pub digital: &'a [i16],
    /// Frame-major physical values, mV.
    pub physical: &'a [f64],
    /// Every annotation as `(sample, code)`.
    pub annotations: Vec<(usize, u8)>,
}

/// Summary of a successful comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub samples: usize,
    pub annotations: usize,
    pub max_physical_error: f64,
}

pub fn sha256_i16(values: &[i16]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Integers must match exactly, physical values within `tol` mV.
pub fn compare(r: &Reference, d: &Decoded, tol: f64) -> Result<Agreement, String> {
    let n = r.n_channels;
    let fail = |m: String| Err(format!("record {}: {m}", r.record_name));
    if d.n_channels != n || d.sampling_rate != r.sampling_rate || d.gain != r.gain || d.baseline != r.baseline {
        return fail(format!(
            "header differs: channels {} vs {n}, fs {} vs {}, gain {:?} vs {:?}, baseline {:?} vs {:?}",
            d.n_channels, d.sampling_rate, r.sampling_rate, d.gain, r.gain, d.baseline, r.baseline
        ));
    }
    if d.digital.len() != r.n_samples * n || d.physical.len() != d.digital.len() {
        return fail(format!("{} values decoded, expected {}", d.digital.len(), r.n_samples * n));
    }
    let sha = sha256_i16(d.digital);
    if sha != r.digital_sha256 {
        return fail(format!("digital sha256 {sha} != {}", r.digital_sha256));
    }
    for ch in 0..n {
        let sum: i64 = d.digital.iter().skip(ch).step_by(n).map(|&v| v as i64).sum();
        if sum != r.digital_sum[ch] {
            return fail(format!("channel {ch} sum {sum} != {}", r.digital_sum[ch]));
        }
        let check = d.digital.iter().skip(ch).step_by(n).fold(0i16, |a, &v| a.wrapping_add(v));
        if check as i32 != r.checksum[ch] {
            return fail(format!("channel {ch} checksum {check} != {}", r.checksum[ch]));
        }
    }
    let frame = |k: usize| &d.digital[k * n..(k + 1) * n];
    for (k, row) in r.digital_head.iter().enumerate() {
        if frame(k) != row.as_slice() {
            return fail(format!("head frame {k} differs"));
        }
    }
    let tail_start = r.n_samples - r.digital_tail.len();
    for (k, row) in r.digital_tail.iter().enumerate() {
        if frame(tail_start + k) != row.as_slice() {
            return fail(format!("tail frame {} differs", tail_start + k));
        }
    }
    let mut max_err = 0.0f64;
    for (j, (drow, prow)) in r.digital_strided.iter().zip(&r.physical_strided).enumerate() {
        let k = j * r.stride;
        if frame(k) != drow.as_slice() {
            return fail(format!("frame {k} differs"));
        }
        for ch in 0..n {
            let e = (d.physical[k * n + ch] - prow[ch]).abs();
            max_err = max_err.max(e);
        }
    }
    if max_err > tol {
        return fail(format!("physical error {max_err:e} mV exceeds {tol:e}"));
    }
    let expected: Vec<(usize, u8)> = r.annotations.iter().map(|a| (a.0, a.2)).collect();
    if d.annotations != expected {
        let first = d
            .annotations
            .iter()
            .zip(&expected)
            .position(|(a, b)| a != b)
            .unwrap_or(d.annotations.len().min(expected.len()));
        return fail(format!(
            "annotations differ at index {first} ({} parsed, {} expected)",
            d.annotations.len(),
            expected.len()
        ));
    }
    Ok(Agreement {
        samples: r.n_samples,
        annotations: expected.len(),
        max_physical_error: max_err,
    })
}
