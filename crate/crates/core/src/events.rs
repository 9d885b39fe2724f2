//! Address-event streams and their on-disk format.
//!
//! An event file is a flat sequence of 13-byte little-endian records
//! `(time: f64 seconds, source_id: u32, meta: u8)` with no header. A JSON
//! sidecar (`<file>.json`) carries the stream duration, the meaning of the
//! source ids and, for encoder output, the delta per channel.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const RECORD_BYTES: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    Up,
    Down,
}

impl Polarity {
    pub fn as_meta(self) -> u8 {
        match self {
            Polarity::Up => 0,
            Polarity::Down => 1,
        }
    }

    pub fn from_meta(meta: u8) -> Option<Polarity> {
        match meta {
            0 => Some(Polarity::Up),
            1 => Some(Polarity::Down),
            _ => None,
        }
    }
}

/// One encoder event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub channel: u32,
    pub polarity: Polarity,
}

impl Event {
    /// Input line id: `2 * channel + polarity` (ch0-up, ch0-down, ch1-up, ...).
    pub fn line(&self) -> u32 {
        2 * self.channel + self.polarity.as_meta() as u32
    }
}

/// Time-ordered up/down events of a multichannel signal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventTrain {
    pub events: Vec<Event>,
    pub duration: f64,
    pub n_channels: usize,
}

impl EventTrain {
    pub fn n_lines(&self) -> usize {
        2 * self.n_channels
    }

    pub fn count(&self, channel: u32, polarity: Polarity) -> usize {
        self.events
            .iter()
            .filter(|e| e.channel == channel && e.polarity == polarity)
            .count()
    }

    /// Events with `start <= time < end`, re-based to `start`.
    pub fn window(&self, start: f64, end: f64) -> EventTrain {
        let events = self
            .events
            .iter()
            .filter(|e| e.time >= start && e.time < end)
            .map(|e| Event {
                time: e.time - start,
                ..*e
            })
            .collect();
        EventTrain {
            events,
            duration: (end.min(self.duration) - start).max(0.0),
            n_channels: self.n_channels,
        }
    }

    pub fn to_records(&self) -> Vec<AerRecord> {
        self.events
            .iter()
            .map(|e| AerRecord {
                time: e.time,
                source: e.line(),
                meta: e.polarity.as_meta(),
            })
            .collect()
    }

    /// Rebuild from records whose source ids are input lines.
    pub fn from_records(records: &[AerRecord], duration: f64, n_channels: usize) -> io::Result<Self> {
        let events = records
            .iter()
            .map(|r| {
                let polarity = Polarity::from_meta(r.meta).ok_or_else(|| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("bad polarity byte {}", r.meta))
                })?;
                Ok(Event {
                    time: r.time,
                    channel: r.source / 2,
                    polarity,
                })
            })
            .collect::<io::Result<Vec<_>>>()?;
        Ok(EventTrain {
            events,
            duration,
            n_channels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AerRecord {
    pub time: f64,
    pub source: u32,
    pub meta: u8,
}

impl AerRecord {
    pub fn to_bytes(&self) -> [u8; RECORD_BYTES] {
        let mut b = [0u8; RECORD_BYTES];
        b[..8].copy_from_slice(&self.time.to_le_bytes());
        b[8..12].copy_from_slice(&self.source.to_le_bytes());
        b[12] = self.meta;
        b
    }

    pub fn from_bytes(b: &[u8; RECORD_BYTES]) -> Self {
        AerRecord {
            time: f64::from_le_bytes(b[..8].try_into().unwrap()),
            source: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            meta: b[12],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Encoder,
    Spikes,
}

/// JSON sidecar next to every event file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventFileMeta {
    pub version: u32,
    pub kind: EventKind,
    pub duration_s: f64,
    pub n_sources: usize,
    /// Human-readable name per source id (input lines or populations).
    pub source_map: Vec<String>,
    /// Encoder threshold per channel, mV. Empty for spike files.
    #[serde(default)]
    pub delta_mv: Vec<f64>,
    pub n_events: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub struct AerWriter<W: Write> {
    inner: W,
    written: usize,
}

impl AerWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(AerWriter::new(BufWriter::new(File::create(path)?)))
    }
}

impl<W: Write> AerWriter<W> {
    pub fn new(inner: W) -> Self {
        AerWriter { inner, written: 0 }
    }

    pub fn write(&mut self, rec: &AerRecord) -> io::Result<()> {
        self.written += 1;
        self.inner.write_all(&rec.to_bytes())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> io::Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Streaming reader over an event file.
pub struct AerReader<R: Read> {
    inner: R,
}

impl AerReader<BufReader<File>> {
    pub fn open(path: &Path) -> io::Result<Self> {
        Ok(AerReader::new(BufReader::with_capacity(1 << 16, File::open(path)?)))
    }
}

impl<R: Read> AerReader<R> {
    pub fn new(inner: R) -> Self {
        AerReader { inner }
    }
}

impl<R: Read> Iterator for AerReader<R> {
    type Item = io::Result<AerRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut buf = [0u8; RECORD_BYTES];
        let mut filled = 0;
        while filled < RECORD_BYTES {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) if filled == 0 => return None,
                Ok(0) => {
                    return Some(Err(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        "partial event record",
                    )))
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Some(Err(e)),
            }
        }
        Some(Ok(AerRecord::from_bytes(&buf)))
    }
}

pub fn write_events(path: &Path, records: &[AerRecord], meta: &EventFileMeta) -> io::Result<()> {
    let mut w = AerWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    write_meta(path, meta)
}

pub fn write_meta(path: &Path, meta: &EventFileMeta) -> io::Result<()> {
    let json = serde_json::to_vec_pretty(meta).map_err(io::Error::other)?;
    std::fs::write(sidecar_path(path), json)
}

pub fn read_meta(path: &Path) -> io::Result<EventFileMeta> {
    let bytes = std::fs::read(sidecar_path(path))?;
    serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub fn read_events(path: &Path) -> io::Result<Vec<AerRecord>> {
    AerReader::open(path)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn record_bytes_roundtrip(time in -1e9f64..1e9, source: u32, meta: u8) {
            let r = AerRecord { time, source, meta };
            prop_assert_eq!(AerRecord::from_bytes(&r.to_bytes()), r);
        }
    }

    #[test]
    fn reader_rejects_partial_record() {
        let mut bytes = AerRecord { time: 1.0, source: 3, meta: 1 }.to_bytes().to_vec();
        bytes.extend([1, 2, 3]);
        let out: Vec<_> = AerReader::new(&bytes[..]).collect();
        assert_eq!(out.len(), 2);
        assert!(out[0].is_ok());
        assert!(out[1].is_err());
    }

    #[test]
    fn line_ids() {
        let e = Event { time: 0.0, channel: 1, polarity: Polarity::Down };
        assert_eq!(e.line(), 3);
        let train = EventTrain { events: vec![e], duration: 1.0, n_channels: 2 };
        let back = EventTrain::from_records(&train.to_records(), 1.0, 2).unwrap();
        assert_eq!(back, train);
    }

    #[test]
    fn file_roundtrip() {
        let dir = std::env::temp_dir().join(format!("ecgres-events-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.aer");
        let recs = vec![
            AerRecord { time: 0.5, source: 0, meta: 0 },
            AerRecord { time: 0.75, source: 767, meta: 0 },
        ];
        let meta = EventFileMeta {
            version: 1,
            kind: EventKind::Spikes,
            duration_s: 1.0,
            n_sources: 768,
            source_map: vec![],
            delta_mv: vec![],
            n_events: 2,
        };
        write_events(&path, &recs, &meta).unwrap();
        assert_eq!(read_events(&path).unwrap(), recs);
        assert_eq!(read_meta(&path).unwrap(), meta);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 26);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
