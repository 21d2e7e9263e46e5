//! Affine mapping of LiDAR range into the depth-distance domain, fitted by
//! Huber-weighted iteratively reweighted least squares and frozen per run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SensorSequence;
use crate::error::{Error, Result};

pub const MIN_CALIBRATION_PAIRS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineAlignment {
    pub alpha: f64,
    pub beta: f64,
    pub n_used: usize,
    #[serde(default = "frozen_default")]
    pub frozen: bool,
}

fn frozen_default() -> bool {
    true
}

impl AffineAlignment {
    pub const IDENTITY: AffineAlignment = AffineAlignment {
        alpha: 1.0,
        beta: 0.0,
        n_used: 0,
        frozen: true,
    };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::config(format!("invalid alignment alpha={alpha} beta={beta}")));
        }
        Ok(Self {
            alpha,
            beta,
            n_used: 0,
            frozen: true,
        })
    }

    /// LiDAR range expressed in the depth domain.
    #[inline]
    pub fn align(&self, lidar: f64) -> f64 {
        self.alpha * lidar + self.beta
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let a: Self = serde_json::from_str(&text)?;
        Self::new(a.alpha, a.beta)?;
        Ok(a)
    }
}

/// Free function form of [`AffineAlignment::align`].
pub fn align_lidar(lidar: f64, a: &AffineAlignment) -> f64 {
    a.align(lidar)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    pub huber_delta: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub conf_min: f64,
    /// Calibration window from the start of a run, seconds.
    pub window_s: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            huber_delta: 0.1,
            max_iter: 20,
            tol: 1e-8,
            conf_min: 0.8,
            window_s: 5.0,
        }
    }
}

/// Per-iteration record of the robust objective, for diagnostics.
#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(y, w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for ((x, y), w) in x.iter().zip(y).zip(w) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
    }
    if !(sxx > 1e-12 * sw * (1.0 + mx * mx)) {
        return Err(Error::RankDeficient);
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Robust fit of `depth ≈ alpha * lidar + beta` over the pairs where both
/// channels are present and `conf >= conf_min`.
pub fn fit_affine(
    depth: &[Option<f64>],
    lidar: &[Option<f64>],
    conf: &[f64],
    cfg: &AlignConfig,
) -> Result<AffineAlignment> {
    fit_affine_traced(depth, lidar, conf, cfg).map(|(a, _)| a)
}

pub fn fit_affine_traced(
    depth: &[Option<f64>],
    lidar: &[Option<f64>],
    conf: &[f64],
    cfg: &AlignConfig,
) -> Result<(AffineAlignment, FitTrace)> {
    let (x, y): (Vec<f64>, Vec<f64>) = depth
        .iter()
        .zip(lidar)
        .zip(conf)
        .filter_map(|((d, l), c)| match (d, l) {
            (Some(d), Some(l)) if *c >= cfg.conf_min => Some((*l, *d)),
            _ => None,
        })
        .unzip();
    if x.len() < MIN_CALIBRATION_PAIRS {
        return Err(Error::InsufficientCalibration {
            used: x.len(),
            needed: MIN_CALIBRATION_PAIRS,
        });
    }
    let objective = |a: f64, b: f64| {
        x.iter()
            .zip(&y)
            .map(|(x, y)| huber(y - (a * x + b), cfg.huber_delta))
            .sum::<f64>()
    };

    let mut w = vec![1.0; x.len()];
    let (mut alpha, mut beta) = weighted_line(&x, &y, &w)?;
    let mut trace = FitTrace {
        objective: vec![objective(alpha, beta)],
        iterations: 0,
    };
    for _ in 0..cfg.max_iter {
        for ((wi, xi), yi) in w.iter_mut().zip(&x).zip(&y) {
            let r = (yi - (alpha * xi + beta)).abs();
            *wi = if r <= cfg.huber_delta { 1.0 } else { cfg.huber_delta / r };
        }
        let (a, b) = weighted_line(&x, &y, &w)?;
        let change = (a - alpha).abs().max((b - beta).abs());
        alpha = a;
        beta = b;
        trace.iterations += 1;
        trace.objective.push(objective(alpha, beta));
        if change < cfg.tol {
            break;
        }
    }
    if !(alpha > 0.0) {
        return Err(Error::config(format!("fitted scale {alpha} is not positive")));
    }
    Ok((
        AffineAlignment {
            alpha,
            beta,
            n_used: x.len(),
            frozen: true,
        },
        trace,
    ))
}

/// Fits on the calibration window at the start of each given run.
pub fn fit_from_sequences(seqs: &[&SensorSequence], cfg: &AlignConfig) -> Result<AffineAlignment> {
    let mut depth = Vec::new();
    let mut lidar = Vec::new();
    let mut conf = Vec::new();
    for seq in seqs {
        let Some(t0) = seq.frames().first().map(|f| f.t) else {
            continue;
        };
        for f in seq.frames().iter().take_while(|f| f.t - t0 < cfg.window_s) {
            depth.push(f.depth);
            lidar.push(f.lidar);
            conf.push(f.conf);
        }
    }
    fit_affine(&depth, &lidar, &conf, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, Uniform};

    fn fit(x: &[f64], y: &[f64]) -> Result<(AffineAlignment, FitTrace)> {
        let d: Vec<_> = y.iter().map(|v| Some(*v)).collect();
        let l: Vec<_> = x.iter().map(|v| Some(*v)).collect();
        fit_affine_traced(&d, &l, &vec![1.0; x.len()], &AlignConfig::default())
    }

    #[test]
    fn exact_identity() {
        let x: Vec<f64> = (0..20).map(|i| 0.5 + 0.2 * i as f64).collect();
        let (a, _) = fit(&x, &x).unwrap();
        assert!((a.alpha - 1.0).abs() < 1e-9 && a.beta.abs() < 1e-9);
        assert!(a.frozen);
        assert_eq!(a.n_used, 20);
    }

    #[test]
    fn noisy_generator_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let ux = Uniform::new(0.5, 5.0).unwrap();
        let noise = Normal::new(0.0, 0.01).unwrap();
        let x: Vec<f64> = (0..200).map(|_| ux.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|l| 0.95 * l + 0.05 + noise.sample(&mut rng)).collect();
        let (a, _) = fit(&x, &y).unwrap();
        assert!((a.alpha - 0.95).abs() <= 0.02, "{a:?}");
        assert!((a.beta - 0.05).abs() <= 0.02, "{a:?}");
    }

    #[test]
    fn planted_outliers_resisted() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let x: Vec<f64> = (0..20).map(|i| 0.8 + 0.2 * i as f64).collect();
        let mut y: Vec<f64> = x.iter().map(|l| 0.95 * l + 0.05 + noise.sample(&mut rng)).collect();
        let (oracle, _) = fit(&x, &y).unwrap();
        let mut xo = x.clone();
        for k in [3usize, 9, 15] {
            xo.push(x[k]);
            y.push(y[k] + 2.0);
        }
        let (robust, trace) = fit(&xo, &y).unwrap();
        assert!((robust.alpha - oracle.alpha).abs() <= 0.04, "{robust:?} vs {oracle:?}");
        assert!((robust.beta - oracle.beta).abs() <= 0.04, "{robust:?} vs {oracle:?}");
        for w in trace.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective increased: {:?}", trace.objective);
        }
    }

    #[test]
    fn zero_noise_relative_error() {
        let x: Vec<f64> = (0..30).map(|i| 1.0 + 0.1 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|l| 1.07 * l - 0.12).collect();
        let (a, _) = fit(&x, &y).unwrap();
        assert!(((a.alpha - 1.07) / 1.07).abs() <= 1e-6);
        assert!(((a.beta + 0.12) / 0.12).abs() <= 1e-6);
    }

    #[test]
    fn too_few_pairs() {
        let x = [1.0, 2.0, 3.0];
        assert!(matches!(
            fit(&x, &x),
            Err(Error::InsufficientCalibration { used: 3, .. })
        ));
    }

    #[test]
    fn low_confidence_excluded() {
        let d: Vec<_> = (0..20).map(|i| Some(1.0 + i as f64)).collect();
        let conf: Vec<f64> = (0..20).map(|i| if i < 15 { 0.5 } else { 0.9 }).collect();
        let r = fit_affine(&d, &d, &conf, &AlignConfig::default());
        assert!(matches!(r, Err(Error::InsufficientCalibration { used: 5, .. })));
    }

    #[test]
    fn constant_lidar_rank_deficient() {
        let x = vec![2.0; 12];
        let y: Vec<f64> = (0..12).map(|i| 2.0 + 0.01 * i as f64).collect();
        assert!(matches!(fit(&x, &y), Err(Error::RankDeficient)));
    }

    #[test]
    fn align_arithmetic() {
        assert_eq!(AffineAlignment::IDENTITY.align(1.7), 1.7);
        assert_eq!(AffineAlignment::new(2.0, 0.5).unwrap().align(1.0), 2.5);
        let a = AffineAlignment::new(0.95, 0.05).unwrap();
        assert!((align_lidar(2.0, &a) - 1.95).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.json");
        let a = AffineAlignment {
            alpha: 0.9731,
            beta: 0.0412,
            n_used: 250,
            frozen: true,
        };
        a.save(&p).unwrap();
        assert_eq!(AffineAlignment::load(&p).unwrap(), a);
    }

    proptest::proptest! {
        #[test]
        fn align_is_affine(alpha in 0.1f64..3.0, beta in -1.0f64..1.0, l1 in 0.1f64..20.0, l2 in 0.1f64..20.0) {
            let a = AffineAlignment::new(alpha, beta).unwrap();
            let lhs = a.align(l1) - a.align(l2);
            let rhs = alpha * (l1 - l2);
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + alpha * (l1.abs() + l2.abs())));
        }
    }
}
