//! Seeded offline corruption of the depth channel.
//!
//! Attacks are intermittent segments. Inside a segment the depth reading is
//! shifted by a constant signed bias and the confidence is pulled toward a
//! floor; the size of the confidence drop grows with the bias magnitude.
//! A segment may instead become a blackout (no depth, confidence near zero).
//! LiDAR is never touched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AttackKind, FrameLabel, SensorSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    None,
    Weak,
    Mid,
    Strong,
}

impl Severity {
    pub const ATTACKED: [Severity; 3] = [Severity::Weak, Severity::Mid, Severity::Strong];

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::None => "none",
            Severity::Weak => "weak",
            Severity::Mid => "mid",
            Severity::Strong => "strong",
        }
    }
}

impl std::str::FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "clean" => Ok(Severity::None),
            "weak" => Ok(Severity::Weak),
            "mid" => Ok(Severity::Mid),
            "strong" => Ok(Severity::Strong),
            other => Err(Error::config(format!("unknown severity {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub severity: Severity,
    pub seed: u64,
    /// Fraction of the timeline under attack.
    pub segment_density: f64,
    /// Segment length bounds in seconds.
    pub segment_len: (f64, f64),
    /// Bias magnitude bounds in meters; the sign is drawn per segment.
    pub bias_range: (f64, f64),
    pub conf_floor: f64,
    pub blackout_prob: f64,
    /// No segment starts before this many seconds into the run.
    #[serde(default = "default_lead_in")]
    pub lead_in: f64,
}

fn default_lead_in() -> f64 {
    0.5
}

/// Smallest depth an attacked reading may take.
const MIN_ATTACKED_DEPTH: f64 = 0.05;
/// Upper bound of the confidence reported inside a blackout.
const BLACKOUT_CONF_MAX: f64 = 0.05;

impl AttackSpec {
    pub fn preset(severity: Severity, seed: u64) -> Self {
        let (density, bias, floor, blackout) = match severity {
            Severity::None => (0.0, (0.0, 0.0), 1.0, 0.0),
            Severity::Weak => (0.15, (0.10, 0.30), 0.7, 0.0),
            Severity::Mid => (0.25, (0.30, 0.80), 0.4, 0.1),
            Severity::Strong => (0.35, (0.80, 2.00), 0.1, 0.5),
        };
        Self {
            severity,
            seed,
            segment_density: density,
            segment_len: (0.3, 3.0),
            bias_range: bias,
            conf_floor: floor,
            blackout_prob: blackout,
            lead_in: default_lead_in(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.segment_density)
            && self.bias_range.0 <= self.bias_range.1
            && self.bias_range.0 >= 0.0
            && (0.0..=1.0).contains(&self.conf_floor)
            && (0.0..=1.0).contains(&self.blackout_prob)
            && self.segment_len.0 > 0.0
            && self.segment_len.0 <= self.segment_len.1
            && self.lead_in >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid attack spec {self:?}")))
        }
    }
}

/// Non-overlapping `[start, end)` intervals covering `segment_density` of
/// `duration` (after the lead-in), deterministic in `spec.seed`.
pub fn generate_segments(duration: f64, spec: &AttackSpec) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    segments_with(&mut rng, duration, spec)
}

fn segments_with(rng: &mut ChaCha8Rng, duration: f64, spec: &AttackSpec) -> Vec<(f64, f64)> {
    if spec.severity == Severity::None || spec.segment_density <= 0.0 || duration <= spec.lead_in {
        return Vec::new();
    }
    let usable = duration - spec.lead_in;
    let target = (spec.segment_density * duration).min(usable);
    let (lo, hi) = spec.segment_len;

    let mut lengths = Vec::new();
    let mut covered = 0.0;
    while covered < target {
        let len = rng.random_range(lo..=hi).min(target - covered);
        lengths.push(len);
        covered += len;
    }
    // tiny remainders read as noise rather than a segment
    if lengths.len() > 1 && *lengths.last().unwrap() < 0.5 * lo {
        let tail = lengths.pop().unwrap();
        let n = lengths.len() as f64;
        lengths.iter_mut().for_each(|l| *l += tail / n);
    }

    // shuffle order, then split the free time into random gaps (Dirichlet)
    for i in (1..lengths.len()).rev() {
        let j = rng.random_range(0..=i);
        lengths.swap(i, j);
    }
    let free = (usable - covered).max(0.0);
    let weights: Vec<f64> = (0..=lengths.len())
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let wsum: f64 = weights.iter().sum();

    let mut t = spec.lead_in;
    let mut out = Vec::with_capacity(lengths.len());
    for (len, w) in lengths.iter().zip(&weights) {
        t += free * w / wsum;
        let end = (t + len).min(duration);
        out.push((t, end));
        t = end;
    }
    out
}

/// Applies `spec` to a clean sequence, returning the attacked copy with
/// per-frame labels.
pub fn apply_attack(clean: &SensorSequence, spec: &AttackSpec) -> Result<SensorSequence> {
    spec.validate()?;
    let n = clean.len();
    let valid = clean.frames().iter().filter(|f| f.depth.is_some()).count();
    if n == 0 || (valid as f64) < 0.9 * n as f64 {
        return Err(Error::SequenceTooSparse { valid, total: n });
    }
    let frames = clean.frames();
    let t0 = frames[0].t;
    let duration = frames[n - 1].t - t0 + clean.dt();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let segments = segments_with(&mut rng, duration, spec);

    let mut out = frames.to_vec();
    let mut labels: Vec<FrameLabel> = vec![None; n];
    let (bmin, bmax) = spec.bias_range;
    for &(start, end) in &segments {
        let magnitude = rng.random_range(bmin..=bmax);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let blackout = rng.random_bool(spec.blackout_prob);
        let drop = if bmax > bmin {
            0.5 + 0.5 * (magnitude - bmin) / (bmax - bmin)
        } else {
            1.0
        };
        for (i, f) in out.iter_mut().enumerate() {
            let rel = frames[i].t - t0;
            if rel < start || rel >= end {
                continue;
            }
            if blackout {
                f.depth = None;
                f.conf = rng.random_range(0.0..BLACKOUT_CONF_MAX);
                labels[i] = Some(AttackKind::Blackout);
            } else {
                f.depth = f.depth.map(|d| (d + sign * magnitude).max(MIN_ATTACKED_DEPTH));
                if f.conf > spec.conf_floor {
                    f.conf -= drop * (f.conf - spec.conf_floor);
                }
                labels[i] = Some(AttackKind::Bias);
            }
        }
    }
    SensorSequence::new(clean.id(), out, Some(labels), clean.meta())
}
