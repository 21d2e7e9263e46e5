//! Synchronized sensor frames, sequences, sampling-period estimation and
//! forecaster context windows.

mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_sequence, load_sequence_dir, save_sequence, SequenceFormat};

/// Logging period of the benchmark sensors (50 Hz).
pub const NOMINAL_DT: f64 = 0.02;

/// One synchronized sample. `depth` and `lidar` are `None` when the channel
/// produced no return; absence is never encoded as a sentinel number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    pub conf: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lidar: Option<f64>,
    pub speed: f64,
    pub throttle: f64,
    pub steering: f64,
}

impl SensorFrame {
    pub fn validate(&self, index: usize) -> Result<()> {
        let bad = |reason: &str| Error::InvalidFrame {
            index,
            reason: reason.to_string(),
        };
        if !self.t.is_finite() {
            return Err(bad("timestamp not finite"));
        }
        if !(0.0..=1.0).contains(&self.conf) {
            return Err(bad(&format!("confidence {} outside [0, 1]", self.conf)));
        }
        if let Some(d) = self.depth {
            if !(d.is_finite() && d > 0.0) {
                return Err(bad(&format!("depth {d} must be finite and positive")));
            }
        }
        if let Some(l) = self.lidar {
            if !(l.is_finite() && l > 0.0) {
                return Err(bad(&format!("lidar {l} must be finite and positive")));
            }
        }
        if !(self.speed.is_finite() && self.throttle.is_finite() && self.steering.is_finite()) {
            return Err(bad("vehicle state not finite"));
        }
        Ok(())
    }
}

/// Kind of corruption applied to a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Bias,
    Blackout,
    /// Labelled attacked but of unrecorded kind (e.g. imported `1` flags).
    Unknown,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Bias => "bias",
            AttackKind::Blackout => "blackout",
            AttackKind::Unknown => "unknown",
        }
    }
}

/// Per-frame ground truth: `None` is a clean frame.
pub type FrameLabel = Option<AttackKind>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub commanded_speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steering_setting: Option<f64>,
}

/// Frames of one driving run. Construction validates every frame, strict
/// timestamp ordering and label length, so a `SensorSequence` is always
/// well-formed.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSequence {
    id: String,
    frames: Vec<SensorFrame>,
    labels: Option<Vec<FrameLabel>>,
    meta: SequenceMeta,
}

impl SensorSequence {
    pub fn new(
        id: impl Into<String>,
        frames: Vec<SensorFrame>,
        labels: Option<Vec<FrameLabel>>,
        meta: SequenceMeta,
    ) -> Result<Self> {
        for (i, f) in frames.iter().enumerate() {
            f.validate(i)?;
        }
        if let Some(i) = frames.windows(2).position(|p| p[1].t <= p[0].t) {
            return Err(Error::NonMonotoneTimestamps { index: i + 1 });
        }
        if let Some(labels) = &labels {
            if labels.len() != frames.len() {
                return Err(Error::LengthMismatch {
                    left: frames.len(),
                    right: labels.len(),
                });
            }
        }
        Ok(Self {
            id: id.into(),
            frames,
            labels,
            meta,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn frames(&self) -> &[SensorFrame] {
        &self.frames
    }

    pub fn labels(&self) -> Option<&[FrameLabel]> {
        self.labels.as_deref()
    }

    pub fn meta(&self) -> SequenceMeta {
        self.meta
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_attacked(&self, index: usize) -> bool {
        self.labels
            .as_ref()
            .is_some_and(|l| l[index].is_some())
    }

    /// Attack flags, all false for an unlabelled sequence.
    pub fn attack_flags(&self) -> Vec<bool> {
        match &self.labels {
            Some(l) => l.iter().map(Option::is_some).collect(),
            None => vec![false; self.frames.len()],
        }
    }

    pub fn depth(&self) -> Vec<Option<f64>> {
        self.frames.iter().map(|f| f.depth).collect()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn into_parts(self) -> (String, Vec<SensorFrame>, Option<Vec<FrameLabel>>, SequenceMeta) {
        (self.id, self.frames, self.labels, self.meta)
    }

    /// Sampling period of this run (median interval), or the nominal period
    /// for single-frame sequences.
    pub fn dt(&self) -> f64 {
        estimate_dt(&self.timestamps()).unwrap_or(NOMINAL_DT)
    }
}

/// How the sampling period entering the features is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum DtPolicy {
    #[default]
    Median,
    Fixed(f64),
}

impl DtPolicy {
    pub fn resolve(self, timestamps: &[f64]) -> Result<f64> {
        match self {
            DtPolicy::Median => estimate_dt(timestamps),
            DtPolicy::Fixed(dt) if dt > 0.0 => Ok(dt),
            DtPolicy::Fixed(dt) => Err(Error::NonPositiveDt(dt)),
        }
    }
}

/// Median inter-sample interval.
pub fn estimate_dt(timestamps: &[f64]) -> Result<f64> {
    if timestamps.len() < 2 {
        return Err(Error::InsufficientTimestamps(timestamps.len()));
    }
    let mut diffs = Vec::with_capacity(timestamps.len() - 1);
    for (i, pair) in timestamps.windows(2).enumerate() {
        let d = pair[1] - pair[0];
        if d.is_nan() || d <= 0.0 {
            return Err(Error::NonMonotoneTimestamps { index: i + 1 });
        }
        diffs.push(d);
    }
    diffs.sort_by(f64::total_cmp);
    let n = diffs.len();
    Ok(if n % 2 == 1 {
        diffs[n / 2]
    } else {
        0.5 * (diffs[n / 2 - 1] + diffs[n / 2])
    })
}

/// The last `W` observations ending at a given index, gap-filled.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub values: Vec<f64>,
    pub conf: Vec<f64>,
    pub speed: Vec<f64>,
    pub dt: f64,
}

impl ContextWindow {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("window is never empty")
    }
}

/// Gap-fills `series[t_index + 1 - w ..= t_index]` causally: absent values
/// carry the last observation forward, and positions before the first
/// observation take the earliest valid value at or before `t_index`.
pub fn fill_window(series: &[Option<f64>], t_index: usize, w: usize) -> Result<Vec<f64>> {
    assert!(w >= 1, "window length must be at least 1");
    if t_index >= series.len() {
        return Err(Error::NoValidContext(t_index));
    }
    let start = (t_index + 1).saturating_sub(w);
    // carried value entering the window
    let mut carry = series[..start].iter().rev().find_map(|v| *v);
    if carry.is_none() {
        carry = series[start..=t_index].iter().find_map(|v| *v);
    }
    let Some(mut carry) = carry else {
        return Err(Error::NoValidContext(t_index));
    };
    let pad = w - (t_index + 1 - start);
    let mut out = Vec::with_capacity(w);
    out.extend(std::iter::repeat_n(carry, pad));
    for v in &series[start..=t_index] {
        if let Some(v) = v {
            carry = *v;
        }
        out.push(carry);
    }
    Ok(out)
}

/// Context window over the depth channel of `seq` ending at `t_index`.
pub fn make_window(seq: &SensorSequence, t_index: usize, w: usize) -> Result<ContextWindow> {
    let depth = seq.depth();
    let values = fill_window(&depth, t_index, w)?;
    let frames = seq.frames();
    let start = (t_index + 1).saturating_sub(w);
    let pad = w - (t_index + 1 - start);
    let first = &frames[start];
    let mut conf = vec![first.conf; pad];
    let mut speed = vec![first.speed; pad];
    for f in &frames[start..=t_index] {
        conf.push(if f.depth.is_some() { f.conf } else { 0.0 });
        speed.push(f.speed);
    }
    let ts: Vec<f64> = frames[start..=t_index].iter().map(|f| f.t).collect();
    let dt = estimate_dt(&ts).unwrap_or_else(|_| seq.dt());
    Ok(ContextWindow {
        values,
        conf,
        speed,
        dt,
    })
}

#[cfg(test)]
pub(crate) fn frame(t: f64, depth: Option<f64>) -> SensorFrame {
    SensorFrame {
        t,
        depth,
        conf: 0.9,
        lidar: depth,
        speed: 1.0,
        throttle: 0.2,
        steering: 0.0,
    }
}
