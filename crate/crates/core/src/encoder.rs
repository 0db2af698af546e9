//! Incremental string encoders: count/length conversion and index homing.
//!
//! Counts are post-quadrature-decode. An increasing count means the string
//! got longer. Each encoder emits index pulses at its recorded first-index
//! length and then every `index_spacing_counts`; the first pulse seen after
//! power-on fixes the absolute length.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::LEG_COUNT;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncoderError {
    #[error("encoder channel is not homed")]
    NotHomed,
    #[error("homing incomplete: no index pulse on channel(s) {channels:?}")]
    HomingIncomplete { channels: Vec<usize> },
    #[error("invalid encoder spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub counts_per_mm: f64,
    pub range_mm: f64,
    pub index_spacing_counts: i64,
    /// Absolute string length at the first index pulse, mm.
    pub first_index_length_mm: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            counts_per_mm: 60.0,
            range_mm: 200.0,
            index_spacing_counts: 4000,
            first_index_length_mm: 0.0,
        }
    }
}

impl EncoderSpec {
    pub fn with_first_index(first_index_length_mm: f64) -> Self {
        Self {
            first_index_length_mm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if !(self.counts_per_mm > 0.0 && self.counts_per_mm.is_finite()) {
            return Err(EncoderError::InvalidSpec("counts_per_mm must be > 0".into()));
        }
        if !(self.range_mm > 0.0 && self.range_mm.is_finite()) {
            return Err(EncoderError::InvalidSpec("range_mm must be > 0".into()));
        }
        if self.index_spacing_counts <= 0 {
            return Err(EncoderError::InvalidSpec("index_spacing_counts must be > 0".into()));
        }
        if !self.first_index_length_mm.is_finite() {
            return Err(EncoderError::InvalidSpec("first_index_length_mm must be finite".into()));
        }
        Ok(())
    }

    pub fn full_range_counts(&self) -> f64 {
        self.counts_per_mm * self.range_mm
    }

    pub fn index_spacing_mm(&self) -> f64 {
        counts_to_mm(self, self.index_spacing_counts)
    }

    /// Number of index pulses whose position lies inside `[0, range_mm]`.
    pub fn index_pulses_in_range(&self) -> usize {
        (0..)
            .map(|k| self.index_length_mm(k))
            .take_while(|l| *l <= self.range_mm + 1e-9)
            .filter(|l| *l >= 0.0)
            .count()
    }

    /// Absolute length of index pulse `k` (k = 0 is the first pulse).
    pub fn index_length_mm(&self, k: u32) -> f64 {
        self.first_index_length_mm + k as f64 * self.index_spacing_mm()
    }

    /// Nearest whole count for an absolute length.
    pub fn length_to_counts(&self, length_mm: f64) -> i64 {
        (length_mm * self.counts_per_mm).round() as i64
    }
}

pub fn counts_to_mm(spec: &EncoderSpec, counts: i64) -> f64 {
    counts as f64 / spec.counts_per_mm
}

/// Count state of one encoder. `Copy`, so a snapshot is a plain copy and
/// count and latch are always read together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderChannel {
    pub spec: EncoderSpec,
    /// Signed counts since power-on.
    pub raw_count: i64,
    pub index_latched: bool,
    /// `raw_count` captured at the first index pulse.
    pub index_count: i64,
}

impl EncoderChannel {
    pub fn new(spec: EncoderSpec) -> Self {
        Self {
            spec,
            raw_count: 0,
            index_latched: false,
            index_count: 0,
        }
    }

    /// Advances the count; the first index pulse latches the count reached
    /// at the end of this update. Later pulses leave the latch alone.
    pub fn feed_counts(&mut self, delta: i64, index_seen: bool) {
        self.raw_count += delta;
        if index_seen && !self.index_latched {
            self.index_latched = true;
            self.index_count = self.raw_count;
        }
    }

    /// Same as [`feed_counts`](Self::feed_counts) for an absolute raw count.
    pub fn set_raw_count(&mut self, raw_count: i64, index_seen: bool) {
        self.feed_counts(raw_count - self.raw_count, index_seen);
    }

    /// Clears the latch; the raw count is kept.
    pub fn reset_latch(&mut self) {
        self.index_latched = false;
        self.index_count = 0;
    }

    /// Offset (mm) such that `absolute = raw_count / counts_per_mm + offset`.
    pub fn home_offset(&self) -> Result<f64, EncoderError> {
        if !self.index_latched {
            return Err(EncoderError::NotHomed);
        }
        Ok(self.spec.first_index_length_mm - counts_to_mm(&self.spec, self.index_count))
    }

    pub fn absolute_length(&self) -> Result<f64, EncoderError> {
        if !self.index_latched {
            return Err(EncoderError::NotHomed);
        }
        Ok(self.spec.first_index_length_mm
            + counts_to_mm(&self.spec, self.raw_count - self.index_count))
    }
}

/// One decoded sample of a single channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountEvent {
    pub delta: i64,
    pub index: bool,
}

/// Replays a retraction trace on every channel. Latches are cleared first so
/// a repeated homing starts over.
pub fn home_all(
    channels: &mut [EncoderChannel; LEG_COUNT],
    retract_traces: &[Vec<CountEvent>; LEG_COUNT],
) -> Result<(), EncoderError> {
    let mut missing = Vec::new();
    for (i, (ch, trace)) in channels.iter_mut().zip(retract_traces).enumerate() {
        ch.reset_latch();
        for ev in trace {
            ch.feed_counts(ev.delta, ev.index);
        }
        if !ch.index_latched {
            missing.push(i);
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(EncoderError::HomingIncomplete { channels: missing })
    }
}

/// Per-encoder homing reference, as stored under `encoders` in the
/// geometry config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderReference {
    pub first_index_length_mm: f64,
}

pub fn channels_from_references(
    base: &EncoderSpec,
    refs: &[EncoderReference; LEG_COUNT],
) -> [EncoderChannel; LEG_COUNT] {
    refs.map(|r| {
        EncoderChannel::new(EncoderSpec {
            first_index_length_mm: r.first_index_length_mm,
            ..*base
        })
    })
}
