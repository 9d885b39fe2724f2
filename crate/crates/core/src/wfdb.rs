//! Reader for MIT-BIH Arrhythmia Database records in WFDB layout.
//!
//! Three files make up a record: a text header (`.hea`), the packed
//! samples (`.dat`, format 212 only) and the reference beat annotations
//! (`.atr`, MIT binary annotation format).

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default ADC gain used by WFDB when a header leaves it at zero.
const DEFAULT_GAIN: f64 = 200.0;

/// Reserved sample value marking an invalid sample in format 212.
pub const INVALID_SAMPLE_212: i16 = -2048;

#[derive(Debug, Error)]
pub enum WfdbError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated signal: need {needed} bytes, got {got}")]
    TruncatedSignal { needed: usize, got: usize },
    #[error("header/format mismatch: {0}")]
    FormatMismatch(String),
    #[error("malformed annotation (byte or sample {offset}): {reason}")]
    MalformedAnnotation { offset: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Beat labels kept by the detector. Every other beat type maps to `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BeatLabel {
    Normal,
    Lbbb,
    Rbbb,
    Pvc,
    Paced,
    Apb,
    Other,
}

impl BeatLabel {
    /// The five anomaly classes, in readout-unit order.
    pub const ANOMALIES: [BeatLabel; 5] = [
        BeatLabel::Lbbb,
        BeatLabel::Rbbb,
        BeatLabel::Pvc,
        BeatLabel::Paced,
        BeatLabel::Apb,
    ];

    /// Normal followed by the anomalies.
    pub const IN_SCOPE: [BeatLabel; 6] = [
        BeatLabel::Normal,
        BeatLabel::Lbbb,
        BeatLabel::Rbbb,
        BeatLabel::Pvc,
        BeatLabel::Paced,
        BeatLabel::Apb,
    ];

    pub fn is_anomaly(self) -> bool {
        !matches!(self, BeatLabel::Normal | BeatLabel::Other)
    }

    pub fn in_scope(self) -> bool {
        self != BeatLabel::Other
    }

    /// Position in [`BeatLabel::ANOMALIES`].
    pub fn anomaly_index(self) -> Option<usize> {
        BeatLabel::ANOMALIES.iter().position(|&l| l == self)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            BeatLabel::Normal => "N",
            BeatLabel::Lbbb => "LBBB",
            BeatLabel::Rbbb => "RBBB",
            BeatLabel::Pvc => "PVC",
            BeatLabel::Paced => "PACED",
            BeatLabel::Apb => "APB",
            BeatLabel::Other => "OTHER",
        }
    }

    pub fn long_name(self) -> &'static str {
        match self {
            BeatLabel::Normal => "Normal rhythm",
            BeatLabel::Lbbb => "Left bundle branch block beat",
            BeatLabel::Rbbb => "Right bundle branch block beat",
            BeatLabel::Pvc => "Premature ventricular contraction",
            BeatLabel::Paced => "Paced beat",
            BeatLabel::Apb => "Atrial premature beat",
            BeatLabel::Other => "Other beat",
        }
    }

    pub fn from_short_name(s: &str) -> Option<BeatLabel> {
        [BeatLabel::Other]
            .into_iter()
            .chain(BeatLabel::IN_SCOPE)
            .find(|l| l.short_name() == s)
    }

    /// Map an MIT annotation code to a label. `None` for non-beat codes.
    pub fn from_annotation_code(code: u8) -> Option<BeatLabel> {
        match code {
            1 => Some(BeatLabel::Normal),
            2 => Some(BeatLabel::Lbbb),
            3 => Some(BeatLabel::Rbbb),
            5 => Some(BeatLabel::Pvc),
            12 => Some(BeatLabel::Paced),
            8 => Some(BeatLabel::Apb),
            4 | 6 | 7 | 9 | 10 | 11 | 13 | 25 | 34 | 35 | 38 | 41 => Some(BeatLabel::Other),
            _ => None,
        }
    }
}

impl fmt::Display for BeatLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub file_name: String,
    pub format: u16,
    /// ADC units per mV.
    pub gain: f64,
    pub baseline: i32,
    pub adc_zero: i32,
    pub initial_value: Option<i32>,
    pub checksum: Option<i32>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub record_name: String,
    pub n_channels: usize,
    pub sampling_rate: f64,
    pub n_samples: usize,
    pub channels: Vec<ChannelSpec>,
}

impl RecordHeader {
    pub fn gains(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.gain).collect()
    }

    pub fn baselines(&self) -> Vec<i32> {
        self.channels.iter().map(|c| c.baseline).collect()
    }

    /// Checks the layout every MIT-BIH Arrhythmia record shares.
    pub fn check_mitbih(&self) -> Result<(), WfdbError> {
        if self.n_channels != 2 {
            return Err(WfdbError::FormatMismatch(format!(
                "record {} has {} channels, expected 2",
                self.record_name, self.n_channels
            )));
        }
        if (self.sampling_rate - 360.0).abs() > 1e-9 {
            return Err(WfdbError::FormatMismatch(format!(
                "record {} sampled at {} Hz, expected 360",
                self.record_name, self.sampling_rate
            )));
        }
        Ok(())
    }
}

/// Multichannel signal in physical units (mV), stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSignal {
    pub sampling_rate: f64,
    pub n_channels: usize,
    data: Vec<f64>,
}

impl SampledSignal {
    pub fn new(sampling_rate: f64, n_channels: usize, data: Vec<f64>) -> Self {
        assert!(n_channels > 0, "signal needs at least one channel");
        assert_eq!(data.len() % n_channels, 0, "ragged signal data");
        Self {
            sampling_rate,
            n_channels,
            data,
        }
    }

    pub fn from_channels(sampling_rate: f64, channels: &[Vec<f64>]) -> Self {
        let n_channels = channels.len();
        let n = channels.first().map_or(0, Vec::len);
        assert!(channels.iter().all(|c| c.len() == n), "ragged channels");
        let mut data = Vec::with_capacity(n * n_channels);
        for i in 0..n {
            data.extend(channels.iter().map(|c| c[i]));
        }
        Self::new(sampling_rate, n_channels, data)
    }

    pub fn empty(sampling_rate: f64, n_channels: usize) -> Self {
        Self::new(sampling_rate, n_channels, Vec::new())
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n_channels
    }

    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 / self.sampling_rate
    }

    pub fn get(&self, sample: usize, channel: usize) -> f64 {
        self.data[sample * self.n_channels + channel]
    }

    pub fn frame(&self, sample: usize) -> &[f64] {
        &self.data[sample * self.n_channels..(sample + 1) * self.n_channels]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_channels)
    }

    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.frames().map(|f| f[channel]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Frames `start..end` as a new signal.
    pub fn slice(&self, start: usize, end: usize) -> SampledSignal {
        SampledSignal::new(
            self.sampling_rate,
            self.n_channels,
            self.data[start * self.n_channels..end * self.n_channels].to_vec(),
        )
    }

    pub fn push_frame(&mut self, frame: &[f64]) {
        assert_eq!(frame.len(), self.n_channels);
        self.data.extend_from_slice(frame);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatAnnotation {
    pub sample_index: usize,
    pub label: BeatLabel,
}

/// A fully parsed record.
#[derive(Debug, Clone)]
pub struct Record {
    pub header: RecordHeader,
    pub signal: SampledSignal,
    pub annotations: Vec<BeatAnnotation>,
}

fn header_err(msg: impl Into<String>) -> WfdbError {
    WfdbError::MalformedHeader(msg.into())
}

/// Parse a WFDB `.hea` text header.
pub fn parse_header(bytes: &[u8]) -> Result<RecordHeader, WfdbError> {
    let text = std::str::from_utf8(bytes).map_err(|_| header_err("header is not valid UTF-8"))?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));

    let record_line = lines.next().ok_or_else(|| header_err("missing record line"))?;
    let mut fields = record_line.split_whitespace();
    let name_field = fields.next().ok_or_else(|| header_err("missing record name"))?;
    if name_field.contains('/') {
        return Err(WfdbError::UnsupportedFormat(format!(
            "multi-segment record {name_field}"
        )));
    }
    let n_channels: usize = fields
        .next()
        .ok_or_else(|| header_err("missing signal count"))?
        .parse()
        .map_err(|_| header_err("bad signal count"))?;
    if n_channels == 0 {
        return Err(header_err("record declares no signals"));
    }
    let sampling_rate = match fields.next() {
        // "360", "360/...", "360(...)"
        Some(f) => f
            .split(['/', '('])
            .next()
            .unwrap_or_default()
            .parse::<f64>()
            .map_err(|_| header_err(format!("bad sampling frequency {f:?}")))?,
        None => 250.0,
    };
    if !(sampling_rate > 0.0) {
        return Err(header_err("sampling frequency must be positive"));
    }
    let n_samples: usize = match fields.next() {
        Some(f) => f
            .parse()
            .map_err(|_| header_err(format!("bad sample count {f:?}")))?,
        None => 0,
    };

    let mut channels = Vec::with_capacity(n_channels);
    for i in 0..n_channels {
        let line = lines
            .next()
            .ok_or_else(|| header_err(format!("missing signal line {}", i + 1)))?;
        channels.push(parse_signal_line(line)?);
    }

    Ok(RecordHeader {
        record_name: name_field.to_string(),
        n_channels,
        sampling_rate,
        n_samples,
        channels,
    })
}

fn parse_signal_line(line: &str) -> Result<ChannelSpec, WfdbError> {
    let mut fields = line.split_whitespace();
    let file_name = fields
        .next()
        .ok_or_else(|| header_err("empty signal line"))?
        .to_string();
    let fmt_field = fields
        .next()
        .ok_or_else(|| header_err(format!("signal line for {file_name} lacks a format")))?;
    // format[xsamp][:skew][+offset]
    let fmt_digits: String = fmt_field.chars().take_while(char::is_ascii_digit).collect();
    let format: u16 = fmt_digits
        .parse()
        .map_err(|_| header_err(format!("bad format field {fmt_field:?}")))?;
    if fmt_digits.len() != fmt_field.len() {
        return Err(WfdbError::UnsupportedFormat(format!(
            "format modifiers in {fmt_field:?}"
        )));
    }
    if format != 212 {
        return Err(WfdbError::UnsupportedFormat(format!("format {format}")));
    }

    let parse_i32 = |s: Option<&str>, what: &str| -> Result<Option<i32>, WfdbError> {
        s.map(|v| {
            v.parse::<i32>()
                .map_err(|_| header_err(format!("bad {what} {v:?}")))
        })
        .transpose()
    };

    // gain[(baseline)][/units]
    let (mut gain, mut baseline) = (DEFAULT_GAIN, None);
    if let Some(g) = fields.next() {
        let g = g.split('/').next().unwrap_or_default();
        let (g_val, b_val) = match g.split_once('(') {
            Some((gv, rest)) => (gv, Some(rest.trim_end_matches(')'))),
            None => (g, None),
        };
        let parsed: f64 = g_val
            .parse()
            .map_err(|_| header_err(format!("bad gain {g:?}")))?;
        if parsed < 0.0 {
            return Err(header_err(format!("negative gain {parsed}")));
        }
        if parsed > 0.0 {
            gain = parsed;
        }
        baseline = parse_i32(b_val, "baseline")?;
    }
    let _adc_resolution = fields.next();
    let adc_zero = parse_i32(fields.next(), "ADC zero")?.unwrap_or(0);
    let initial_value = parse_i32(fields.next(), "initial value")?;
    let checksum = parse_i32(fields.next(), "checksum")?;
    let _block_size = fields.next();
    let description = fields.collect::<Vec<_>>().join(" ");

    Ok(ChannelSpec {
        file_name,
        format,
        gain,
        baseline: baseline.unwrap_or(adc_zero),
        adc_zero,
        initial_value,
        checksum,
        description,
    })
}

/// Unpack format-212 bytes into frame-major 12-bit integers.
pub fn decode_212(bytes: &[u8], n_samples: usize, n_channels: usize) -> Result<Vec<i16>, WfdbError> {
    let total = n_samples * n_channels;
    let needed = (total * 3).div_ceil(2);
    if bytes.len() < needed {
        return Err(WfdbError::TruncatedSignal {
            needed,
            got: bytes.len(),
        });
    }
    let sign_extend = |v: u16| -> i16 { ((v << 4) as i16) >> 4 };
    let mut out = Vec::with_capacity(total);
    for triplet in bytes[..needed].chunks(3) {
        let b0 = triplet[0] as u16;
        let b1 = triplet[1] as u16;
        out.push(sign_extend(b0 | ((b1 & 0x0f) << 8)));
        if out.len() < total {
            let b2 = triplet[2] as u16;
            out.push(sign_extend(b2 | ((b1 & 0xf0) << 4)));
        }
    }
    Ok(out)
}

/// Decode a format-212 signal file into physical units.
///
/// Invalid samples (-2048) repeat the last valid value of their channel
/// (or the baseline when none precedes them) so the output stays finite.
pub fn parse_signal_212(bytes: &[u8], header: &RecordHeader) -> Result<SampledSignal, WfdbError> {
    if header.channels.len() != header.n_channels {
        return Err(WfdbError::FormatMismatch(format!(
            "{} signal lines for {} channels",
            header.channels.len(),
            header.n_channels
        )));
    }
    if let Some(c) = header.channels.iter().find(|c| c.format != 212) {
        return Err(WfdbError::UnsupportedFormat(format!("format {}", c.format)));
    }
    if header
        .channels
        .windows(2)
        .any(|w| w[0].file_name != w[1].file_name)
    {
        return Err(WfdbError::FormatMismatch(
            "channels stored in separate files".into(),
        ));
    }
    let n = header.n_channels;
    let digital = decode_212(bytes, header.n_samples, n)?;
    let mut last_valid: Vec<f64> = vec![0.0; n];
    let mut data = Vec::with_capacity(digital.len());
    for frame in digital.chunks_exact(n) {
        for (ch, &adc) in frame.iter().enumerate() {
            let spec = &header.channels[ch];
            let v = if adc == INVALID_SAMPLE_212 {
                last_valid[ch]
            } else {
                (adc as f64 - spec.baseline as f64) / spec.gain
            };
            last_valid[ch] = v;
            data.push(v);
        }
    }
    Ok(SampledSignal::new(header.sampling_rate, n, data))
}

/// 16-bit checksums of a decoded signal, one per channel, as stored in
/// WFDB headers.
pub fn checksums(digital: &[i16], n_channels: usize) -> Vec<i16> {
    let mut sums = vec![0i16; n_channels];
    for frame in digital.chunks_exact(n_channels) {
        for (s, &v) in sums.iter_mut().zip(frame) {
            *s = s.wrapping_add(v);
        }
    }
    sums
}

const ANN_SKIP: u8 = 59;
const ANN_NUM: u8 = 60;
const ANN_SUB: u8 = 61;
const ANN_CHN: u8 = 62;
const ANN_AUX: u8 = 63;

/// One annotation as stored, before beat filtering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAnnotation {
    pub sample_index: usize,
    pub code: u8,
    pub aux: Option<Vec<u8>>,
}

/// Parse an MIT-format annotation file into all of its annotations.
///
/// Each annotation is a little-endian 16-bit word: the top six bits are
/// the type code, the low ten bits the sample delta since the previous
/// annotation. Pseudo-codes 59..=63 carry long skips and auxiliary fields.
pub fn parse_annotation_stream(bytes: &[u8]) -> Result<Vec<RawAnnotation>, WfdbError> {
    let mut out: Vec<RawAnnotation> = Vec::new();
    let mut time: i64 = 0;
    let mut pos = 0usize;
    let malformed = |offset: usize, reason: &str| WfdbError::MalformedAnnotation {
        offset,
        reason: reason.to_string(),
    };

    while pos + 1 < bytes.len() {
        let word = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
        let code = (word >> 10) as u8;
        let arg = (word & 0x03ff) as i64;
        let at = pos;
        pos += 2;
        match code {
            0 if arg == 0 => return Ok(out),
            ANN_SKIP => {
                if pos + 4 > bytes.len() {
                    return Err(malformed(at, "truncated skip"));
                }
                // PDP-11 long: high word first, each word little-endian.
                let hi = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]) as u32;
                let lo = u16::from_le_bytes([bytes[pos + 2], bytes[pos + 3]]) as u32;
                pos += 4;
                let skip = ((hi << 16) | lo) as i32 as i64;
                time += skip;
                if time < 0 {
                    return Err(malformed(at, "skip moves time before record start"));
                }
            }
            ANN_NUM | ANN_SUB | ANN_CHN => {}
            ANN_AUX => {
                let len = arg as usize;
                let field = bytes.get(pos..pos + len).ok_or_else(|| malformed(at, "aux field runs past end of file"))?;
                if let Some(last) = out.last_mut() {
                    last.aux = Some(field.to_vec());
                }
                pos += len + (len & 1);
            }
            0..=49 => {
                time += arg;
                out.push(RawAnnotation {
                    sample_index: time as usize,
                    code,
                    aux: None,
                });
            }
            _ => return Err(malformed(at, "reserved annotation code")),
        }
    }
    // Files written without a terminator still parse.
    Ok(out)
}

/// Parse an MIT-format annotation file, keeping beat annotations only.
/// Beat times must be strictly increasing.
pub fn parse_annotations(bytes: &[u8]) -> Result<Vec<BeatAnnotation>, WfdbError> {
    let mut beats: Vec<BeatAnnotation> = Vec::new();
    for raw in parse_annotation_stream(bytes)? {
        let Some(label) = BeatLabel::from_annotation_code(raw.code) else {
            continue;
        };
        if let Some(prev) = beats.last() {
            if raw.sample_index <= prev.sample_index {
                return Err(WfdbError::MalformedAnnotation {
                    offset: raw.sample_index,
                    reason: "beat times not strictly increasing".into(),
                });
            }
        }
        beats.push(BeatAnnotation {
            sample_index: raw.sample_index,
            label,
        });
    }
    Ok(beats)
}

fn read(path: &Path) -> Result<Vec<u8>, WfdbError> {
    fs::read(path).map_err(|source| WfdbError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Read `<dir>/<name>.hea`, its signal file and `<dir>/<name>.atr`.
pub fn read_record(dir: &Path, name: &str) -> Result<Record, WfdbError> {
    let header = parse_header(&read(&dir.join(format!("{name}.hea")))?)?;
    let dat = read(&dir.join(&header.channels[0].file_name))?;
    let signal = parse_signal_212(&dat, &header)?;
    let annotations = parse_annotations(&read(&dir.join(format!("{name}.atr")))?)?;
    if let Some(a) = annotations.iter().find(|a| a.sample_index >= header.n_samples) {
        return Err(WfdbError::MalformedAnnotation {
            offset: 0,
            reason: format!(
                "annotation at sample {} beyond record end {}",
                a.sample_index, header.n_samples
            ),
        });
    }
    Ok(Record {
        header,
        signal,
        annotations,
    })
}

/// Record names (header stems) found in a directory, sorted.
pub fn list_records(dir: &Path) -> Result<Vec<String>, WfdbError> {
    let entries = fs::read_dir(dir).map_err(|source| WfdbError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension().and_then(|x| x.to_str()) == Some("hea"))
                .then(|| p.file_stem()?.to_str().map(str::to_string))
                .flatten()
        })
        .collect();
    names.sort();
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER_100: &str = "100 2 360 650000\n\
        100.dat 212 200 11 1024 995 -22131 0 MLII\n\
        100.dat 212 200 11 1024 1011 20052 0 V5\n\
        # 69 M 1085 1629 x1\n";

    #[test]
    fn header_fields() {
        let h = parse_header(HEADER_100.as_bytes()).unwrap();
        assert_eq!(h.record_name, "100");
        assert_eq!(h.n_channels, 2);
        assert_eq!(h.sampling_rate, 360.0);
        assert_eq!(h.n_samples, 650000);
        assert_eq!(h.gains(), vec![200.0, 200.0]);
        assert_eq!(h.baselines(), vec![1024, 1024]);
        assert_eq!(h.channels[0].checksum, Some(-22131));
        assert_eq!(h.channels[1].description, "V5");
        h.check_mitbih().unwrap();
    }

    #[test]
    fn zero_channels_is_malformed() {
        let err = parse_header(b"x 0 360 100\n").unwrap_err();
        assert!(matches!(err, WfdbError::MalformedHeader(_)));
    }

    #[test]
    fn missing_signal_line_is_malformed() {
        let err = parse_header(b"x 2 360 100\nx.dat 212 200 11 1024 0 0 0 a\n").unwrap_err();
        assert!(matches!(err, WfdbError::MalformedHeader(_)));
        assert!(matches!(parse_header(b"# only a comment\n"), Err(WfdbError::MalformedHeader(_))));
    }

    #[test]
    fn other_formats_rejected() {
        let err = parse_header(b"x 1 360 100\nx.dat 16 200 16 0 0 0 0 a\n").unwrap_err();
        assert!(matches!(err, WfdbError::UnsupportedFormat(_)));
    }

    #[test]
    fn baseline_in_gain_field_and_default_gain() {
        let h = parse_header(b"x 2 360/1(0) 10\nx.dat 212 100(7)/mV 11 3 0 0 0 a\nx.dat 212 0 11 5\n").unwrap();
        assert_eq!(h.channels[0].gain, 100.0);
        assert_eq!(h.channels[0].baseline, 7);
        assert_eq!(h.channels[1].gain, DEFAULT_GAIN);
        assert_eq!(h.channels[1].baseline, 5);
    }

    fn two_channel_header(n_samples: usize, gain: f64, baseline: i32) -> RecordHeader {
        let spec = ChannelSpec {
            file_name: "t.dat".into(),
            format: 212,
            gain,
            baseline,
            adc_zero: baseline,
            initial_value: None,
            checksum: None,
            description: String::new(),
        };
        RecordHeader {
            record_name: "t".into(),
            n_channels: 2,
            sampling_rate: 360.0,
            n_samples,
            channels: vec![spec.clone(), spec],
        }
    }

    #[test]
    fn zero_triplet() {
        let s = parse_signal_212(&[0, 0, 0], &two_channel_header(1, 200.0, 0)).unwrap();
        assert_eq!(s.frame(0), &[0.0, 0.0]);
    }

    #[test]
    fn plus_minus_one_triplet() {
        // +1 = 0x001 (low byte 0x01, high nibble 0); -1 = 0xfff.
        let s = parse_signal_212(&[0x01, 0xf0, 0xff], &two_channel_header(1, 200.0, 0)).unwrap();
        assert_eq!(s.frame(0), &[0.005, -0.005]);
    }

    #[test]
    fn twelve_bit_extremes() {
        // 2047 = 0x7ff, -2047 = 0x801
        let d = decode_212(&[0xff, 0x87, 0x01], 1, 2).unwrap();
        assert_eq!(d, vec![2047, -2047]);
    }

    #[test]
    fn truncated_signal() {
        let err = parse_signal_212(&[0, 0, 0, 0], &two_channel_header(2, 200.0, 0)).unwrap_err();
        assert!(matches!(err, WfdbError::TruncatedSignal { needed: 6, got: 4 }));
    }

    #[test]
    fn odd_sample_count_uses_half_triplet() {
        let d = decode_212(&[0x05, 0x00], 3, 1).unwrap_err();
        assert!(matches!(d, WfdbError::TruncatedSignal { needed: 5, .. }));
        let d = decode_212(&[0x05, 0x00, 0x06, 0x07, 0x00], 3, 1).unwrap();
        assert_eq!(d, vec![5, 6, 7]);
    }

    #[test]
    fn invalid_samples_hold_previous_value() {
        // frames: (1, -2048), (-2048, 2)
        let bytes = [0x01, 0x80, 0x00, 0x00, 0x08, 0x02];
        let d = decode_212(&bytes, 2, 2).unwrap();
        assert_eq!(d, vec![1, -2048, -2048, 2]);
        let s = parse_signal_212(&bytes, &two_channel_header(2, 1.0, 0)).unwrap();
        assert_eq!(s.as_slice(), &[1.0, 0.0, 1.0, 2.0]);
    }

    fn word(code: u8, delta: u16) -> [u8; 2] {
        (((code as u16) << 10) | delta).to_le_bytes()
    }

    #[test]
    fn empty_annotation_stream() {
        assert!(parse_annotations(&[0, 0]).unwrap().is_empty());
        assert!(parse_annotations(&[]).unwrap().is_empty());
    }

    #[test]
    fn beats_and_non_beats() {
        let mut b = Vec::new();
        b.extend(word(28, 10)); // rhythm change
        b.extend(word(ANN_AUX, 3));
        b.extend(b"(N\0\0");
        b.extend(word(1, 50));
        b.extend(word(5, 300));
        b.extend(word(ANN_SUB, 1));
        b.extend(word(13, 200));
        b.extend(word(12, 1));
        b.extend([0, 0]);
        let beats = parse_annotations(&b).unwrap();
        let got: Vec<_> = beats.iter().map(|a| (a.sample_index, a.label)).collect();
        assert_eq!(
            got,
            vec![
                (60, BeatLabel::Normal),
                (360, BeatLabel::Pvc),
                (560, BeatLabel::Other),
                (561, BeatLabel::Paced)
            ]
        );
    }

    #[test]
    fn long_skip() {
        let mut b = Vec::new();
        b.extend(word(ANN_SKIP, 0));
        b.extend(1u16.to_le_bytes()); // high word
        b.extend(5u16.to_le_bytes()); // low word
        b.extend(word(1, 3));
        let beats = parse_annotations(&b).unwrap();
        assert_eq!(beats[0].sample_index, 65536 + 5 + 3);
    }

    #[test]
    fn decreasing_time_is_malformed() {
        let mut b = Vec::new();
        b.extend(word(1, 100));
        b.extend(word(ANN_SKIP, 0));
        b.extend(0xffffu16.to_le_bytes());
        b.extend((-50i16 as u16).to_le_bytes());
        b.extend(word(1, 0));
        let err = parse_annotations(&b).unwrap_err();
        assert!(matches!(err, WfdbError::MalformedAnnotation { .. }));
    }

    #[test]
    fn duplicate_beat_time_is_malformed() {
        let mut b = Vec::new();
        b.extend(word(1, 100));
        b.extend(word(1, 0));
        assert!(parse_annotations(&b).is_err());
    }

    #[test]
    fn label_codes() {
        assert_eq!(BeatLabel::from_annotation_code(8), Some(BeatLabel::Apb));
        assert_eq!(BeatLabel::from_annotation_code(12), Some(BeatLabel::Paced));
        assert_eq!(BeatLabel::from_annotation_code(6), Some(BeatLabel::Other));
        assert_eq!(BeatLabel::from_annotation_code(28), None);
        assert_eq!(BeatLabel::from_short_name("PVC"), Some(BeatLabel::Pvc));
        assert_eq!(BeatLabel::Apb.anomaly_index(), Some(4));
    }
}
