//! Frozen probabilistic temporal prior.
//!
//! A [`Forecaster`] draws `S` sample paths of length `H` from a univariate
//! context; [`forecast`] validates the draw and reduces it to per-step mean
//! and population standard deviation.

mod bootstrap;
mod sidecar;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bootstrap::BootstrapForecaster;
pub use sidecar::{SidecarForecaster, PROTOCOL};

#[derive(Debug, Clone, Copy)]
pub struct ForecastRequest<'a> {
    pub context: &'a [f64],
    pub horizon: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl ForecastRequest<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.n_samples < 2 {
            return Err(Error::config(format!(
                "forecast request needs H >= 1 and S >= 2 (got H={}, S={})",
                self.horizon, self.n_samples
            )));
        }
        if self.context.is_empty() || self.context.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("forecast context must be non-empty and finite"));
        }
        Ok(())
    }
}

/// Row-major `S x H` matrix of sample paths.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    n_samples: usize,
    horizon: usize,
    data: Vec<f64>,
}

impl SampleMatrix {
    pub fn new(n_samples: usize, horizon: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_samples * horizon {
            return Err(Error::InvalidForecast(format!(
                "expected {n_samples}x{horizon} samples, got {} values",
                data.len()
            )));
        }
        Ok(Self {
            n_samples,
            horizon,
            data,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let s = rows.len();
        let h = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != h) {
            return Err(Error::InvalidForecast("ragged sample rows".into()));
        }
        Self::new(s, h, rows.into_iter().flatten().collect())
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.horizon..(s + 1) * self.horizon]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.horizon.max(1))
    }

    pub fn get(&self, s: usize, h: usize) -> f64 {
        self.data[s * self.horizon + h]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSummary {
    pub samples: SampleMatrix,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl ForecastSummary {
    /// First-horizon mean and standard deviation.
    pub fn first_step(&self) -> (f64, f64) {
        (self.mu[0], self.sigma[0])
    }
}

/// Per-column mean and population standard deviation.
pub fn summarize(samples: &SampleMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = samples.n_samples();
    if s < 2 {
        return Err(Error::InvalidForecast(format!("need at least 2 samples, got {s}")));
    }
    let n = s as f64;
    let mut mu = Vec::with_capacity(samples.horizon());
    let mut sigma = Vec::with_capacity(samples.horizon());
    for h in 0..samples.horizon() {
        let first = samples.get(0, h);
        if (1..s).all(|i| samples.get(i, h) == first) {
            mu.push(first);
            sigma.push(0.0);
            continue;
        }
        let m = (0..s).map(|i| samples.get(i, h)).sum::<f64>() / n;
        let var = (0..s).map(|i| (samples.get(i, h) - m).powi(2)).sum::<f64>() / n;
        mu.push(m);
        sigma.push(var.sqrt());
    }
    Ok((mu, sigma))
}

/// Forecast seed for frame `t` of a run; identical in training and inference
/// so the same context always sees the same sample paths.
pub fn step_seed(seed: u64, t: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub trait Forecaster: Send + Sync {
    fn name(&self) -> &str;

    /// Draws `req.n_samples` paths of length `req.horizon`.
    fn draw(&self, req: &ForecastRequest<'_>) -> Result<SampleMatrix>;
}

pub fn forecast(req: &ForecastRequest<'_>, backend: &dyn Forecaster) -> Result<ForecastSummary> {
    req.validate()?;
    let samples = backend.draw(req)?;
    if samples.n_samples() != req.n_samples || samples.horizon() != req.horizon {
        return Err(Error::InvalidForecast(format!(
            "{} returned {}x{}, requested {}x{}",
            backend.name(),
            samples.n_samples(),
            samples.horizon(),
            req.n_samples,
            req.horizon
        )));
    }
    if samples.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidForecast(format!(
            "{} returned non-finite values",
            backend.name()
        )));
    }
    let (mu, sigma) = summarize(&samples)?;
    Ok(ForecastSummary { samples, mu, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastConfig {
    /// Context length `W`.
    pub context_len: usize,
    /// Horizon `H`.
    pub horizon: usize,
    /// Sample count `S`.
    pub n_samples: usize,
    pub block_len: usize,
    /// Number of trailing differences used for the drift estimate.
    pub drift_window: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            context_len: 64,
            horizon: 16,
            n_samples: 20,
            block_len: 4,
            drift_window: 16,
        }
    }
}

/// Backend selection, as written in `ODCA_FORECASTER`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Builtin,
    Sidecar(std::path::PathBuf),
}

impl std::str::FromStr for BackendSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" | "builtin" => Ok(BackendSpec::Builtin),
            other => match other.strip_prefix("sidecar:") {
                Some(path) if !path.is_empty() => Ok(BackendSpec::Sidecar(path.into())),
                _ => Err(Error::config(format!(
                    "ODCA_FORECASTER must be builtin or sidecar:<path>, got {other:?}"
                ))),
            },
        }
    }
}

impl BackendSpec {
    pub fn from_env() -> Result<Self> {
        std::env::var("ODCA_FORECASTER")
            .unwrap_or_default()
            .parse()
    }

    pub fn build(&self, cfg: &ForecastConfig) -> Result<Box<dyn Forecaster>> {
        Ok(match self {
            BackendSpec::Builtin => Box::new(BootstrapForecaster::from_config(cfg)),
            BackendSpec::Sidecar(path) => Box::new(SidecarForecaster::spawn(
                path,
                1,
                std::time::Duration::from_secs(30),
            )?),
        })
    }
}
