//! Per-step gated repair: forecast, delta, cross-sensor gate, convex fusion.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::align::AffineAlignment;
use crate::data::{fill_window, SensorFrame, SensorSequence, NOMINAL_DT};
use crate::error::{Error, Result};
use crate::forecast::{forecast, step_seed, ForecastConfig, ForecastRequest, Forecaster};
use crate::repair::{DeltaHead, FeatureVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub tau_low: f64,
    pub tau_high: f64,
    pub gamma: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            tau_low: 0.15,
            tau_high: 0.60,
            gamma: 1.0,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if 0.0 <= self.tau_low && self.tau_low < self.tau_high && self.tau_high.is_finite() && self.gamma > 0.0 {
            Ok(())
        } else {
            Err(Error::config(format!(
                "gate needs 0 <= tau_low < tau_high and gamma > 0, got {self:?}"
            )))
        }
    }
}

/// Fusion weight for a cross-sensor residual.
pub fn gate(r_xs: f64, cfg: &GateConfig) -> f64 {
    if r_xs <= cfg.tau_low {
        return 0.0;
    }
    if r_xs >= cfg.tau_high {
        return 1.0;
    }
    let x = (r_xs - cfg.tau_low) / (cfg.tau_high - cfg.tau_low);
    if cfg.gamma == 1.0 {
        x
    } else {
        x.powf(cfg.gamma)
    }
}

/// `(1 - w) * d_tilde + w * d_rep`, exact at both ends.
pub fn fuse(d_tilde: f64, d_rep: f64, w: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::GateOutOfRange(w));
    }
    Ok(if w == 0.0 {
        d_tilde
    } else if w == 1.0 {
        d_rep
    } else {
        (1.0 - w) * d_tilde + w * d_rep
    })
}

/// Working observation and confidence: the depth reading, or the forecast
/// mean with zero confidence when depth is absent.
pub fn observe(frame: &SensorFrame, mu1: f64) -> (f64, f64) {
    match frame.depth {
        Some(d) => (d, frame.conf),
        None => (mu1, 0.0),
    }
}

pub fn features(frame: &SensorFrame, mu1: f64, sigma1: f64, dt: f64) -> FeatureVector {
    let (obs, conf) = observe(frame, mu1);
    FeatureVector::new(obs, conf, mu1, sigma1, frame.speed, frame.throttle, frame.steering, dt)
}

/// Interval ending at frame `t`; the nominal period for the first frame.
pub fn frame_dt(timestamps: &[f64], t: usize) -> f64 {
    if t == 0 {
        NOMINAL_DT
    } else {
        timestamps[t] - timestamps[t - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    /// Observation the correction was applied to (`mu1` during blackout).
    pub d_obs: f64,
    pub d_rep: f64,
    pub d_fused: f64,
    pub w: f64,
    pub r_xs: Option<f64>,
    pub r_delta: f64,
    pub r_post: Option<f64>,
    pub used_fallback: bool,
    pub mu1: f64,
    pub sigma1: f64,
}

/// Builds the forecaster context of the online path. While the gate is
/// closed the context takes the observation. When it opens the context
/// restarts from the forecast and from then on follows the observed
/// increments, which a constant offset leaves intact. Through a blackout it
/// takes the forecast. The repaired value never enters the context, so
/// errors of the head cannot accumulate in the drift estimate.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContextTracker {
    /// Observation and context value of the previous frame while the gate
    /// stays open.
    open: Option<(f64, f64)>,
}

impl ContextTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Context value contributed by a finished step.
    pub fn push(&mut self, frame: &SensorFrame, out: &StepOutput) -> f64 {
        let value = match frame.depth {
            None => out.mu1,
            Some(d) if out.w == 0.0 => d,
            Some(d) => match self.open {
                Some((prev_d, prev_v)) => prev_v + (d - prev_d),
                None => out.mu1,
            },
        };
        self.open = frame.depth.filter(|_| out.w > 0.0).map(|d| (d, value));
        value
    }
}

/// Immutable parts of the online path.
#[derive(Clone, Copy)]
pub struct OnlineRepair<'a> {
    pub head: &'a DeltaHead,
    pub alignment: AffineAlignment,
    pub gate: GateConfig,
    pub forecast: ForecastConfig,
    pub forecaster: &'a dyn Forecaster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRun {
    pub steps: Vec<StepOutput>,
    pub latency_us: Vec<f64>,
}

impl OnlineRepair<'_> {
    pub fn step(&self, frame: &SensorFrame, context: &[f64], dt: f64, seed: u64) -> Result<StepOutput> {
        let req = ForecastRequest {
            context,
            horizon: self.forecast.horizon,
            n_samples: self.forecast.n_samples,
            seed,
        };
        let (mu1, sigma1) = forecast(&req, self.forecaster)?.first_step();
        let (d_obs, _) = observe(frame, mu1);
        let delta = self.head.predict_delta(&features(frame, mu1, sigma1, dt))?;
        let d_rep = d_obs + delta;
        let lidar = frame.lidar.map(|l| self.alignment.align(l));
        let r_xs = lidar.map(|l| (d_obs - l).abs());
        let (w, used_fallback) = match (frame.depth, r_xs) {
            (Some(_), Some(r)) => (gate(r, &self.gate), false),
            _ => (1.0, true),
        };
        let d_fused = fuse(d_obs, d_rep, w)?;
        Ok(StepOutput {
            d_obs,
            d_rep,
            d_fused,
            w,
            r_xs,
            r_delta: delta.abs(),
            r_post: lidar.map(|l| (d_fused - l).abs()),
            used_fallback,
            mu1,
            sigma1,
        })
    }

    /// Causal pass over a sequence. The forecaster context at frame `t` is
    /// the [`ContextTracker`] history up to `t - 1` (the observation itself at
    /// `t = 0`).
    pub fn run_sequence(&self, seq: &SensorSequence, seed: u64) -> Result<SequenceRun> {
        let ts = seq.timestamps();
        let w = self.forecast.context_len;
        let mut history: Vec<Option<f64>> = Vec::with_capacity(seq.len());
        let mut tracker = ContextTracker::new();
        let mut steps = Vec::with_capacity(seq.len());
        let mut latency_us = Vec::with_capacity(seq.len());
        let depth = seq.depth();
        for (t, frame) in seq.frames().iter().enumerate() {
            let start = Instant::now();
            let context = if t == 0 {
                fill_window(&depth, 0, w)?
            } else {
                fill_window(&history, t - 1, w)?
            };
            let out = self.step(frame, &context, frame_dt(&ts, t), step_seed(seed, t as u64))?;
            latency_us.push(start.elapsed().as_secs_f64() * 1e6);
            history.push(Some(tracker.push(frame, &out)));
            steps.push(out);
        }
        Ok(SequenceRun { steps, latency_us })
    }
}
