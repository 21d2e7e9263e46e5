//! Synthetic approach-and-stop recordings.
//!
//! Each sequence cruises at its commanded speed, brakes at a constant rate
//! and comes to rest in front of the obstacle. Depth noise is a stationary
//! AR(1) process, so consecutive readings stay kinematically consistent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{SensorFrame, SensorSequence, SequenceMeta};
use crate::error::{Error, Result};
use crate::forecast::step_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_sequences: usize,
    /// Seconds per sequence.
    pub duration: f64,
    pub rate_hz: f64,
    pub speeds: Vec<f64>,
    /// Steering settings in degrees.
    pub steerings: Vec<f64>,
    /// Marginal standard deviation of the depth noise.
    pub depth_noise: f64,
    /// Lag-one correlation of the depth noise.
    pub noise_phi: f64,
    pub conf_mean: f64,
    pub conf_spread: f64,
    /// True depth-from-LiDAR map `depth = alpha * lidar + beta`.
    pub lidar_alpha: f64,
    pub lidar_beta: f64,
    pub lidar_noise: f64,
    /// Per-frame probability that LiDAR returns nothing.
    pub lidar_dropout: f64,
    pub brake_decel: f64,
    /// Range of the resting distance.
    pub stop_range: (f64, f64),
    /// Range of the cruise phase length as a fraction of the duration.
    pub cruise_fraction: (f64, f64),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sequences: 13,
            duration: 8.0,
            rate_hz: 50.0,
            speeds: vec![1.0, 1.5, 2.0],
            steerings: vec![0.0, 15.0, -15.0],
            depth_noise: 0.01,
            noise_phi: 0.95,
            conf_mean: 0.9,
            conf_spread: 0.05,
            lidar_alpha: 0.97,
            lidar_beta: 0.05,
            lidar_noise: 0.02,
            lidar_dropout: 0.0,
            brake_decel: 1.5,
            stop_range: (0.8, 1.5),
            cruise_fraction: (0.35, 0.55),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_sequences >= 1
            && self.duration > 0.0
            && self.rate_hz > 0.0
            && !self.speeds.is_empty()
            && self.speeds.iter().all(|v| *v > 0.0)
            && !self.steerings.is_empty()
            && self.depth_noise >= 0.0
            && (0.0..1.0).contains(&self.noise_phi)
            && self.lidar_alpha > 0.0
            && self.lidar_noise >= 0.0
            && (0.0..=1.0).contains(&self.lidar_dropout)
            && self.brake_decel > 0.0
            && 0.0 < self.stop_range.0
            && self.stop_range.0 <= self.stop_range.1
            && 0.0 < self.cruise_fraction.0
            && self.cruise_fraction.0 <= self.cruise_fraction.1
            && (0.0..=1.0).contains(&(self.conf_mean - self.conf_spread))
            && (0.0..=1.0).contains(&(self.conf_mean + self.conf_spread));
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid generator settings {self:?}")))
        }
    }
}

/// Distance and speed at time `t` of a cruise-brake-rest profile.
fn profile(t: f64, d0: f64, v: f64, t_cruise: f64, decel: f64) -> (f64, f64) {
    if t <= t_cruise {
        return (d0 - v * t, v);
    }
    let t_brake = v / decel;
    let tb = (t - t_cruise).min(t_brake);
    let d = d0 - v * t_cruise - v * tb + 0.5 * decel * tb * tb;
    (d, (v - decel * tb).max(0.0))
}

/// Sequence `index` of the suite, with all frames labelled clean.
pub fn generate_sequence(cfg: &SynthConfig, index: usize) -> Result<SensorSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed(cfg.seed, index as u64));
    let v = cfg.speeds[index % cfg.speeds.len()];
    let steering = cfg.steerings[(index / cfg.speeds.len()) % cfg.steerings.len()];
    let t_cruise = cfg.duration * rng.random_range(cfg.cruise_fraction.0..=cfg.cruise_fraction.1);
    let d_stop = rng.random_range(cfg.stop_range.0..=cfg.stop_range.1);
    let d0 = d_stop + v * t_cruise + v * v / (2.0 * cfg.brake_decel);

    let innovation = Normal::new(0.0, cfg.depth_noise * (1.0 - cfg.noise_phi * cfg.noise_phi).sqrt())
        .map_err(|e| Error::config(e.to_string()))?;
    let lidar_noise = Normal::new(0.0, cfg.lidar_noise).map_err(|e| Error::config(e.to_string()))?;
    let marginal = Normal::new(0.0, cfg.depth_noise).map_err(|e| Error::config(e.to_string()))?;

    let n = (cfg.duration * cfg.rate_hz).round() as usize;
    let mut noise = marginal.sample(&mut rng);
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / cfg.rate_hz;
        if i > 0 {
            noise = cfg.noise_phi * noise + innovation.sample(&mut rng);
        }
        let (d, speed) = profile(t, d0, v, t_cruise, cfg.brake_decel);
        let depth = (d + noise).max(0.05);
        let conf = cfg.conf_mean + cfg.conf_spread * rng.random_range(-1.0..=1.0);
        let ln = lidar_noise.sample(&mut rng);
        let drop = rng.random_bool(cfg.lidar_dropout);
        let lidar = ((d - cfg.lidar_beta) / cfg.lidar_alpha + ln).max(0.05);
        let cruising = t <= t_cruise;
        frames.push(SensorFrame {
            t,
            depth: Some(depth),
            conf,
            lidar: (!drop).then_some(lidar),
            speed,
            throttle: if cruising { 0.1 + 0.15 * v } else { 0.0 },
            steering,
        });
    }
    let meta = SequenceMeta {
        commanded_speed: Some(v),
        steering_setting: Some(steering),
    };
    SensorSequence::new(format!("seq{index:03}"), frames, Some(vec![None; n]), meta)
}

pub fn generate_suite(cfg: &SynthConfig) -> Result<Vec<SensorSequence>> {
    (0..cfg.n_sequences).map(|i| generate_sequence(cfg, i)).collect()
}
