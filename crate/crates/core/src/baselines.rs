//! Reference estimators: no defense, LiDAR only, constant-velocity Kalman
//! fusion and unconditional forecast replacement. Each returns one value per
//! frame, `None` where it has nothing to say yet.

use serde::{Deserialize, Serialize};

use crate::align::AffineAlignment;
use crate::data::{fill_window, SensorSequence};
use crate::error::{Error, Result};
use crate::forecast::{forecast, step_seed, ForecastConfig, ForecastRequest, Forecaster};

pub fn passthrough(seq: &SensorSequence) -> Vec<Option<f64>> {
    seq.depth()
}

/// Aligned LiDAR, carrying the last return forward over dropouts.
pub fn lidar_only(seq: &SensorSequence, alignment: &AffineAlignment) -> Vec<Option<f64>> {
    let mut last = None;
    seq.frames()
        .iter()
        .map(|f| {
            if let Some(l) = f.lidar {
                last = Some(alignment.align(l));
            }
            last
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EkfConfig {
    pub q_pos: f64,
    pub q_vel: f64,
    pub r_depth: f64,
    pub r_lidar: f64,
    /// Initial variance of both state components.
    pub p0: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self {
            q_pos: 1e-4,
            q_vel: 1e-3,
            r_depth: 1e-2,
            r_lidar: 4e-2,
            p0: 1.0,
        }
    }
}

impl EkfConfig {
    pub fn validate(&self) -> Result<()> {
        let v = [self.q_pos, self.q_vel, self.r_depth, self.r_lidar, self.p0];
        if v.iter().all(|x| *x > 0.0 && x.is_finite()) {
            Ok(())
        } else {
            Err(Error::config(format!("EKF variances must be positive, got {self:?}")))
        }
    }
}

/// Confidence floor when scaling the depth measurement variance.
const CONF_FLOOR: f64 = 0.05;

struct Kalman {
    x: [f64; 2],
    p: [[f64; 2]; 2],
}

impl Kalman {
    fn predict(&mut self, dt: f64, cfg: &EkfConfig) {
        let [d, r] = self.x;
        self.x = [d + dt * r, r];
        let p = self.p;
        let p00 = p[0][0] + dt * (p[1][0] + p[0][1]) + dt * dt * p[1][1] + cfg.q_pos;
        let p01 = p[0][1] + dt * p[1][1];
        let p11 = p[1][1] + cfg.q_vel;
        self.p = [[p00, p01], [p01, p11]];
    }

    fn update(&mut self, z: f64, var: f64) {
        let s = self.p[0][0] + var;
        let k = [self.p[0][0] / s, self.p[1][0] / s];
        let y = z - self.x[0];
        self.x[0] += k[0] * y;
        self.x[1] += k[1] * y;
        let p = self.p;
        let p00 = (1.0 - k[0]) * p[0][0];
        let p01 = (1.0 - k[0]) * p[0][1];
        let p11 = p[1][1] - k[1] * p[0][1];
        self.p = [[p00, p01], [p01, p11]];
        self.assert_spd();
    }

    fn assert_spd(&self) {
        let p = self.p;
        assert!(
            p[0][0] > 0.0 && p[1][1] > 0.0 && p[0][0] * p[1][1] - p[0][1] * p[1][0] > 0.0,
            "Kalman covariance lost positive definiteness: {p:?}"
        );
    }
}

/// Constant-velocity filter on (distance, range rate) with sequential depth
/// and aligned-LiDAR updates.
pub fn ekf_fuse(seq: &SensorSequence, alignment: &AffineAlignment, cfg: &EkfConfig) -> Result<Vec<Option<f64>>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(seq.len());
    let mut filter: Option<Kalman> = None;
    let mut prev_t: Option<f64> = None;
    for f in seq.frames() {
        let lidar = f.lidar.map(|l| alignment.align(l));
        let depth_var = cfg.r_depth / f.conf.max(CONF_FLOOR);
        match filter.as_mut() {
            None => {
                if let Some(z) = f.depth.or(lidar) {
                    let mut k = Kalman {
                        x: [z, 0.0],
                        p: [[cfg.p0, 0.0], [0.0, cfg.p0]],
                    };
                    if let (Some(_), Some(l)) = (f.depth, lidar) {
                        k.update(l, cfg.r_lidar);
                    }
                    filter = Some(k);
                }
            }
            Some(k) => {
                let dt = f.t - prev_t.expect("set with the filter");
                if !(dt > 0.0) {
                    return Err(Error::NonPositiveDt(dt));
                }
                k.predict(dt, cfg);
                if let Some(z) = f.depth {
                    k.update(z, depth_var);
                }
                if let Some(l) = lidar {
                    k.update(l, cfg.r_lidar);
                }
            }
        }
        prev_t = Some(f.t);
        out.push(filter.as_ref().map(|k| k.x[0]));
    }
    Ok(out)
}

/// First-step forecast mean from the raw depth history up to `t - 1`
/// (the first observation at `t = 0`), regardless of the measurement.
pub fn forecast_replace(
    seq: &SensorSequence,
    forecaster: &dyn Forecaster,
    cfg: &ForecastConfig,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    let depth = seq.depth();
    let mut out = Vec::with_capacity(seq.len());
    for t in 0..seq.len() {
        let context = match fill_window(&depth, t.saturating_sub(1), cfg.context_len) {
            Ok(c) => c,
            Err(Error::NoValidContext(_)) => {
                out.push(None);
                continue;
            }
            Err(e) => return Err(e),
        };
        let req = ForecastRequest {
            context: &context,
            horizon: cfg.horizon,
            n_samples: cfg.n_samples,
            seed: step_seed(seed, t as u64),
        };
        out.push(Some(forecast(&req, forecaster)?.mu[0]));
    }
    Ok(out)
}
