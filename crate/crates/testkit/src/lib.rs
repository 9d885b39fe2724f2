//! Synthetic MIT-BIH style records for tests.
//!
//! Beats are sums of Gaussian waves (P, Q, R, S, T) with a distinct
//! morphology and timing per beat class, on two leads, with heart-rate
//! variability, noise and baseline wander. Records are written as `.hea`,
//! format-212 `.dat` and MIT `.atr` files by an encoder kept independent
//! from the parser under test.

pub mod oracle;
pub mod reference;

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FS: f64 = 360.0;
pub const GAIN: f64 = 200.0;
pub const ADC_ZERO: i32 = 1024;

/// MIT annotation codes.
pub mod code {
    pub const NORMAL: u8 = 1;
    pub const LBBB: u8 = 2;
    pub const RBBB: u8 = 3;
    pub const APB: u8 = 8;
    pub const PVC: u8 = 5;
    pub const PACED: u8 = 12;
    pub const NOISE: u8 = 16;
    pub const RHYTHM: u8 = 28;
    pub const FUSION: u8 = 6;

    pub const SKIP: u8 = 59;
    pub const NUM: u8 = 60;
    pub const SUB: u8 = 61;
    pub const CHN: u8 = 62;
    pub const AUX: u8 = 63;
}

/// One annotation: sample, code, optional aux string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub sample: usize,
    pub code: u8,
    pub aux: Option<String>,
}

impl Annotation {
    pub fn beat(sample: usize, code: u8) -> Self {
        Annotation { sample, code, aux: None }
    }
}

/// Pack frame-major 12-bit samples into format 212.
pub fn encode_212(samples: &[i16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 3 / 2 + 2);
    for pair in samples.chunks(2) {
        let a = (pair[0] as u16) & 0x0fff;
        let b = pair.get(1).map_or(0, |&v| (v as u16) & 0x0fff);
        out.push((a & 0xff) as u8);
        out.push(((a >> 8) | ((b >> 8) << 4)) as u8);
        if pair.len() == 2 {
            out.push((b & 0xff) as u8);
        }
    }
    out
}

fn push_word(out: &mut Vec<u8>, code: u8, value: u16) {
    let w = ((code as u16) << 10) | (value & 0x3ff);
    out.extend(w.to_le_bytes());
}

/// Encode annotations (sorted by sample) in MIT format, using SKIP for
/// gaps that do not fit ten bits.
pub fn encode_annotations(anns: &[Annotation]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut t = 0usize;
    for a in anns {
        let mut delta = a.sample - t;
        if delta > 1023 {
            push_word(&mut out, code::SKIP, 0);
            let v = delta as u32;
            out.extend(((v >> 16) as u16).to_le_bytes());
            out.extend((v as u16).to_le_bytes());
            delta = 0;
        }
        push_word(&mut out, a.code, delta as u16);
        if let Some(aux) = &a.aux {
            push_word(&mut out, code::AUX, aux.len() as u16);
            out.extend(aux.as_bytes());
            if aux.len() % 2 == 1 {
                out.push(0);
            }
        }
        t = a.sample;
    }
    out.extend([0, 0]);
    out
}

/// Signal in physical units (mV), frame-major, plus annotations.
#[derive(Debug, Clone)]
pub struct SyntheticRecord {
    pub name: String,
    pub n_channels: usize,
    pub mv: Vec<f64>,
    pub annotations: Vec<Annotation>,
}

impl SyntheticRecord {
    pub fn n_samples(&self) -> usize {
        self.mv.len() / self.n_channels
    }

    /// 12-bit ADC values, avoiding the invalid-sample code.
    pub fn digital(&self) -> Vec<i16> {
        self.mv
            .iter()
            .map(|v| ((v * GAIN).round() as i32 + ADC_ZERO).clamp(-2047, 2047) as i16)
            .collect()
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let digital = self.digital();
        let n = self.n_channels;
        let mut header = format!("{} {} {} {}\n", self.name, n, FS, self.n_samples());
        for ch in 0..n {
            let sum = digital.iter().skip(ch).step_by(n).fold(0i16, |a, &v| a.wrapping_add(v));
            let first = digital.get(ch).copied().unwrap_or(0);
            let desc = ["MLII", "V1"].get(ch).copied().unwrap_or("ECG");
            header.push_str(&format!(
                "{}.dat 212 {} 11 {} {} {} 0 {}\n",
                self.name, GAIN, ADC_ZERO, first, sum, desc
            ));
        }
        header.push_str("# synthetic record\n");
        fs::write(dir.join(format!("{}.hea", self.name)), header)?;
        fs::write(dir.join(format!("{}.dat", self.name)), encode_212(&digital))?;
        fs::write(dir.join(format!("{}.atr", self.name)), encode_annotations(&self.annotations))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Normal,
    Lbbb,
    Rbbb,
    Pvc,
    Paced,
    Apb,
}

impl Class {
    pub const ANOMALIES: [Class; 5] = [Class::Lbbb, Class::Rbbb, Class::Pvc, Class::Paced, Class::Apb];

    pub fn code(self) -> u8 {
        match self {
            Class::Normal => code::NORMAL,
            Class::Lbbb => code::LBBB,
            Class::Rbbb => code::RBBB,
            Class::Pvc => code::PVC,
            Class::Paced => code::PACED,
            Class::Apb => code::APB,
        }
    }

    /// Waves per lead: (amplitude mV, offset from R s, width s).
    fn waves(self) -> [&'static [(f64, f64, f64)]; 2] {
        match self {
            Class::Normal => [
                &[(0.15, -0.20, 0.025), (-0.10, -0.03, 0.008), (1.20, 0.0, 0.010), (-0.25, 0.03, 0.010), (0.30, 0.25, 0.045)],
                &[(0.08, -0.20, 0.025), (0.30, -0.01, 0.010), (-0.90, 0.025, 0.014), (0.10, 0.25, 0.050)],
            ],
            Class::Lbbb => [
                &[(0.12, -0.22, 0.025), (0.90, 0.0, 0.025), (0.60, 0.045, 0.020), (-0.35, 0.30, 0.060)],
                &[(0.06, -0.22, 0.025), (-1.20, 0.04, 0.030), (0.25, 0.30, 0.060)],
            ],
            Class::Rbbb => [
                &[(0.15, -0.20, 0.025), (1.00, 0.0, 0.012), (-0.40, 0.05, 0.020), (0.25, 0.27, 0.050)],
                &[(0.08, -0.20, 0.025), (0.30, -0.02, 0.010), (-0.40, 0.02, 0.010), (0.80, 0.06, 0.018), (-0.20, 0.30, 0.050)],
            ],
            Class::Pvc => [
                &[(-0.50, -0.02, 0.020), (1.50, 0.03, 0.035), (-0.60, 0.30, 0.070)],
                &[(1.10, 0.02, 0.040), (-0.50, 0.30, 0.070)],
            ],
            Class::Paced => [
                &[(2.00, -0.06, 0.002), (1.00, 0.0, 0.030), (-0.30, 0.30, 0.060)],
                &[(1.50, -0.06, 0.002), (-0.90, 0.01, 0.030), (0.30, 0.30, 0.060)],
            ],
            Class::Apb => [
                &[(-0.10, -0.15, 0.020), (-0.10, -0.03, 0.008), (1.20, 0.0, 0.010), (-0.25, 0.03, 0.010), (0.28, 0.25, 0.045)],
                &[(-0.06, -0.15, 0.020), (0.30, -0.01, 0.010), (-0.90, 0.025, 0.014), (0.10, 0.25, 0.050)],
            ],
        }
    }

    /// RR interval before this beat relative to the base RR, and after it.
    fn timing(self) -> (f64, f64) {
        match self {
            Class::Pvc => (0.6, 1.4),
            Class::Apb => (0.7, 1.15),
            _ => (1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub duration_s: f64,
    /// Anomalous beats per class, placed in runs of `run_len` beats.
    pub per_class: usize,
    pub run_len: (usize, usize),
    pub noise_mv: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            duration_s: 600.0,
            per_class: 30,
            run_len: (1, 6),
            noise_mv: 0.02,
        }
    }
}

/// Beat class sequence: normal beats with anomalous runs scattered in.
fn class_sequence(n_beats: usize, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Class> {
    let mut seq = vec![Class::Normal; n_beats];
    // Leave the first and last beats normal.
    let usable = n_beats.saturating_sub(4);
    for class in Class::ANOMALIES {
        let mut placed = 0;
        let mut attempts = 0;
        while placed < cfg.per_class && attempts < 10_000 {
            attempts += 1;
            let len = rng.random_range(cfg.run_len.0..=cfg.run_len.1).min(cfg.per_class - placed);
            if usable <= len + 2 {
                break;
            }
            let start = 2 + rng.random_range(0..usable - len);
            // A normal beat on each side keeps runs separate.
            if seq[start - 1..start + len + 1].iter().all(|c| *c == Class::Normal) {
                for c in &mut seq[start..start + len] {
                    *c = class;
                }
                placed += len;
            }
        }
    }
    seq
}

pub fn synth_record(name: &str, seed: u64, cfg: &SynthConfig) -> SyntheticRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (cfg.duration_s * FS) as usize;
    let base_rr = rng.random_range(0.70..0.95);
    let scale = [rng.random_range(0.8..1.2), rng.random_range(0.8..1.2)];
    let wander_f = rng.random_range(0.15..0.4);
    let wander_a = rng.random_range(0.02..0.1);

    let n_beats = (cfg.duration_s / base_rr) as usize;
    let seq = class_sequence(n_beats, cfg, &mut rng);
    let mut r_times = Vec::with_capacity(n_beats);
    let mut t = 0.5;
    let hrv = Normal::new(1.0, 0.03).unwrap();
    let mut prev_after = 1.0;
    for c in &seq {
        let (before, after) = c.timing();
        t += base_rr * hrv.sample(&mut rng) * if r_times.is_empty() { 0.0 } else { before * prev_after };
        prev_after = after;
        if t > cfg.duration_s - 0.6 {
            break;
        }
        r_times.push(t);
    }

    let mut mv = vec![0.0; 2 * n];
    for (k, &r) in r_times.iter().enumerate() {
        let class = seq[k];
        let jitter = rng.random_range(0.95..1.05);
        for (lead, waves) in class.waves().iter().enumerate() {
            for &(amp, off, width) in waves.iter() {
                let center = r + off;
                let w = width * jitter;
                let lo = ((center - 5.0 * w) * FS).floor().max(0.0) as usize;
                let hi = (((center + 5.0 * w) * FS).ceil() as usize).min(n);
                for i in lo..hi {
                    let x = (i as f64 / FS - center) / w;
                    mv[2 * i + lead] += scale[lead] * amp * (-0.5 * x * x).exp();
                }
            }
        }
    }
    let noise = Normal::new(0.0, cfg.noise_mv.max(1e-12)).unwrap();
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    for i in 0..n {
        let wander = wander_a * (std::f64::consts::TAU * wander_f * i as f64 / FS + phase).sin();
        for lead in 0..2 {
            mv[2 * i + lead] += wander + noise.sample(&mut rng);
        }
    }

    let mut annotations = vec![Annotation {
        sample: 0,
        code: code::RHYTHM,
        aux: Some("(N".into()),
    }];
    for (k, &r) in r_times.iter().enumerate() {
        annotations.push(Annotation::beat((r * FS).round() as usize, seq[k].code()));
        // An occasional noise marker between beats.
        if k % 97 == 50 && k + 1 < r_times.len() {
            let mid = ((r + r_times[k + 1]) / 2.0 * FS).round() as usize;
            annotations.push(Annotation::beat(mid, code::NOISE));
        }
    }
    annotations.sort_by_key(|a| a.sample);
    annotations.dedup_by_key(|a| a.sample);

    SyntheticRecord {
        name: name.to_string(),
        n_channels: 2,
        mv,
        annotations,
    }
}

/// Write `n_records` synthetic records named `s00`, `s01`, ... into `dir`.
pub fn write_database(dir: &Path, n_records: usize, seed: u64, cfg: &SynthConfig) -> io::Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for k in 0..n_records {
        let name = format!("s{k:02}");
        synth_record(&name, seed.wrapping_add(k as u64 * 7919), cfg).write(dir)?;
        names.push(name);
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pack_212_matches_worked_example() {
        // +1 and -1 pack as 0x01, 0xF0, 0xFF.
        assert_eq!(encode_212(&[1, -1]), vec![0x01, 0xF0, 0xFF]);
        assert_eq!(encode_212(&[0, 0]), vec![0, 0, 0]);
        assert_eq!(encode_212(&[2047, -2048]), vec![0xFF, 0x87, 0x00]);
    }

    #[test]
    fn annotation_words() {
        let bytes = encode_annotations(&[Annotation::beat(18, code::NORMAL)]);
        assert_eq!(bytes, vec![18, 4, 0, 0]);
        let far = encode_annotations(&[Annotation::beat(70_000, code::PVC)]);
        assert_eq!(far.len(), 2 + 4 + 2 + 2);
    }

    #[test]
    fn record_has_every_class() {
        let rec = synth_record("s", 3, &SynthConfig::default());
        for class in Class::ANOMALIES {
            let n = rec.annotations.iter().filter(|a| a.code == class.code()).count();
            assert!(n >= 20, "{class:?}: {n}");
        }
    }
}
