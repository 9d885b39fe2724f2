//! Sigma-delta (level-crossing) encoding of analog channels into up/down
//! event trains.
//!
//! Each channel keeps a reference level that starts at the first sample.
//! Whenever the linearly interpolated signal reaches `reference + delta`
//! an up event is emitted at the crossing time and the reference moves up
//! by `delta`; symmetrically for down events.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::{Event, EventTrain, Polarity};
use crate::wfdb::SampledSignal;

/// Crossings within this fraction of delta count as reached, so that
/// signals landing exactly on a level are not lost to rounding.
const LEVEL_TOLERANCE: f64 = 1e-9;

/// Acceptable relative deviation of the calibrated event rate.
pub const RATE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("channel {channel} is constant; no delta produces events")]
    NonMonotone { channel: usize },
    #[error("channel {channel}: no delta within 5% of {target} ev/s (closest {closest} ev/s)")]
    TargetUnreachable {
        channel: usize,
        target: f64,
        closest: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Threshold step per channel, mV.
    pub delta: Vec<f64>,
    /// Minimum spacing of same-polarity events on a channel, s.
    pub refractory: f64,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl EncoderConfig {
    pub fn uniform(delta: f64, n_channels: usize) -> Self {
        EncoderConfig {
            delta: vec![delta; n_channels],
            refractory: 0.0,
            interpolation: Interpolation::Linear,
        }
    }

    pub fn validate(&self, n_channels: usize) -> Result<(), EncoderError> {
        if self.delta.len() != n_channels {
            return Err(EncoderError::InvalidConfig(format!(
                "{} deltas for {} channels",
                self.delta.len(),
                n_channels
            )));
        }
        if let Some(d) = self.delta.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
            return Err(EncoderError::InvalidConfig(format!("delta must be > 0, got {d}")));
        }
        if !(self.refractory >= 0.0) {
            return Err(EncoderError::InvalidConfig(format!(
                "refractory must be >= 0, got {}",
                self.refractory
            )));
        }
        Ok(())
    }
}

/// Level-crossing state of one channel.
struct ChannelEncoder {
    origin: f64,
    delta: f64,
    refractory: f64,
    level: i64,
    next_up: f64,
    next_down: f64,
}

impl ChannelEncoder {
    fn new(origin: f64, delta: f64, refractory: f64) -> Self {
        ChannelEncoder {
            origin,
            delta,
            refractory,
            level: 0,
            next_up: f64::NEG_INFINITY,
            next_down: f64::NEG_INFINITY,
        }
    }

    fn threshold(&self, level: i64) -> f64 {
        self.origin + level as f64 * self.delta
    }

    /// Emit the events of the linear piece from `(ta, xa)` to `(tb, xb)`.
    fn segment(&mut self, ta: f64, xa: f64, tb: f64, xb: f64, mut emit: impl FnMut(f64, Polarity)) {
        let tol = LEVEL_TOLERANCE * self.delta;
        let span = tb - ta;
        loop {
            let up = self.threshold(self.level + 1);
            let down = self.threshold(self.level - 1);
            let (thr, polarity, not_before) = if xb >= up - tol {
                (up, Polarity::Up, self.next_up)
            } else if xb <= down + tol {
                (down, Polarity::Down, self.next_down)
            } else {
                return;
            };
            let crossing = if (polarity == Polarity::Up && xa >= thr - tol)
                || (polarity == Polarity::Down && xa <= thr + tol)
            {
                ta
            } else {
                (ta + (thr - xa) / (xb - xa) * span).clamp(ta, tb)
            };
            let t = crossing.max(not_before);
            if t > tb {
                return;
            }
            emit(t, polarity);
            match polarity {
                Polarity::Up => {
                    self.level += 1;
                    self.next_up = t + self.refractory;
                }
                Polarity::Down => {
                    self.level -= 1;
                    self.next_down = t + self.refractory;
                }
            }
        }
    }
}

fn encode_channel(
    signal: &SampledSignal,
    channel: usize,
    delta: f64,
    refractory: f64,
    mut emit: impl FnMut(f64, Polarity),
) {
    let n = signal.n_samples();
    if n == 0 {
        return;
    }
    let fs = signal.sampling_rate;
    let mut enc = ChannelEncoder::new(signal.get(0, channel), delta, refractory);
    let mut prev = signal.get(0, channel);
    for i in 1..n {
        let x = signal.get(i, channel);
        enc.segment((i - 1) as f64 / fs, prev, i as f64 / fs, x, &mut emit);
        prev = x;
    }
}

/// Encode every channel of `signal`; events are merged in time order.
pub fn encode(signal: &SampledSignal, cfg: &EncoderConfig) -> Result<EventTrain, EncoderError> {
    cfg.validate(signal.n_channels)?;
    let mut events = Vec::new();
    for ch in 0..signal.n_channels {
        encode_channel(signal, ch, cfg.delta[ch], cfg.refractory, |time, polarity| {
            events.push(Event {
                time,
                channel: ch as u32,
                polarity,
            })
        });
    }
    // Stable: same-time events keep channel order.
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(EventTrain {
        events,
        duration: signal.duration(),
        n_channels: signal.n_channels,
    })
}

/// Number of events a single channel produces at `delta` (no refractory).
pub fn count_events(signal: &SampledSignal, channel: usize, delta: f64) -> usize {
    let mut count = 0;
    encode_channel(signal, channel, delta, 0.0, |_, _| count += 1);
    count
}

/// Choose a per-channel delta so that each channel emits `target_rate`
/// events per second (up and down combined), within 5%.
pub fn calibrate_delta(signal: &SampledSignal, target_rate: f64) -> Result<EncoderConfig, EncoderError> {
    if !(target_rate > 0.0) || !target_rate.is_finite() {
        return Err(EncoderError::InvalidConfig(format!(
            "target rate must be > 0, got {target_rate}"
        )));
    }
    let duration = signal.duration();
    let mut deltas = Vec::with_capacity(signal.n_channels);
    for ch in 0..signal.n_channels {
        let values = signal.channel(ch);
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = hi - lo;
        if !(range > 0.0) || duration <= 0.0 {
            return Err(EncoderError::NonMonotone { channel: ch });
        }
        let rate = |d: f64| count_events(signal, ch, d) as f64 / duration;

        // Bisection in log(delta); rate is non-increasing in delta. The
        // total variation over delta approximates the event count, which
        // gives the starting bracket.
        let variation: f64 = values.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let guess = (variation / (target_rate * duration)).clamp(range * 1e-9, range);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let consider = |d: f64, r: f64, best: &mut (f64, f64, f64)| {
            let err = (r - target_rate).abs() / target_rate;
            if err < best.0 || (err == best.0 && d > best.1) {
                *best = (err, d, r);
            }
        };
        let mut small = guess / 2.0;
        let mut r_small = rate(small);
        consider(small, r_small, &mut best);
        while r_small < target_rate && small > range * 1e-9 {
            small /= 4.0;
            r_small = rate(small);
            consider(small, r_small, &mut best);
        }
        let mut large = guess * 2.0;
        loop {
            let r = rate(large);
            consider(large, r, &mut best);
            if r <= target_rate || large >= range * 2.0 {
                break;
            }
            large *= 4.0;
        }
        if r_small >= target_rate {
            for _ in 0..100 {
                let mid = (small * large).sqrt();
                let r = rate(mid);
                consider(mid, r, &mut best);
                if best.0 <= 1e-3 || large / small < 1.0 + 1e-12 {
                    break;
                }
                if r > target_rate {
                    small = mid;
                } else {
                    large = mid;
                }
            }
        }
        if best.0 > RATE_TOLERANCE {
            return Err(EncoderError::TargetUnreachable {
                channel: ch,
                target: target_rate,
                closest: best.2,
            });
        }
        deltas.push(best.1);
    }
    Ok(EncoderConfig {
        delta: deltas,
        refractory: 0.0,
        interpolation: Interpolation::Linear,
    })
}

/// Staircase level of `channel` at time `t`, counting events at or before `t`.
pub fn reconstruct_at(train: &EventTrain, channel: u32, delta: f64, initial: f64, t: f64) -> f64 {
    let net: i64 = train
        .events
        .iter()
        .take_while(|e| e.time <= t)
        .filter(|e| e.channel == channel)
        .map(|e| match e.polarity {
            Polarity::Up => 1,
            Polarity::Down => -1,
        })
        .sum();
    initial + delta * net as f64
}

/// Staircase reconstruction sampled at `sampling_rate` over the train's
/// duration.
pub fn decode(train: &EventTrain, delta: &[f64], initial: &[f64], sampling_rate: f64) -> SampledSignal {
    let n_channels = train.n_channels;
    assert_eq!(delta.len(), n_channels);
    assert_eq!(initial.len(), n_channels);
    let n = (train.duration * sampling_rate).round() as usize;
    let mut level = vec![0i64; n_channels];
    let mut next = 0;
    let mut out = SampledSignal::empty(sampling_rate, n_channels);
    let mut frame = vec![0.0; n_channels];
    for i in 0..n {
        let t = i as f64 / sampling_rate;
        while next < train.events.len() && train.events[next].time <= t {
            let e = &train.events[next];
            level[e.channel as usize] += match e.polarity {
                Polarity::Up => 1,
                Polarity::Down => -1,
            };
            next += 1;
        }
        for ch in 0..n_channels {
            frame[ch] = initial[ch] + delta[ch] * level[ch] as f64;
        }
        out.push_frame(&frame);
    }
    out
}
