use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ForecastConfig, ForecastRequest, Forecaster, SampleMatrix};
use crate::error::Result;

/// Smallest distance a sample path may take.
pub const MIN_DISTANCE: f64 = 1e-3;

/// Causal block-bootstrap forecaster.
///
/// Drift is the mean of the trailing first differences of the context; each
/// path extends the last observation by drift plus residual blocks resampled
/// from the context's centred differences. Only the last `context_len` values of a
/// request are read.
#[derive(Debug, Clone)]
pub struct BootstrapForecaster {
    pub context_len: usize,
    pub block_len: usize,
    pub drift_window: usize,
}

impl Default for BootstrapForecaster {
    fn default() -> Self {
        Self::from_config(&ForecastConfig::default())
    }
}

impl BootstrapForecaster {
    pub fn from_config(cfg: &ForecastConfig) -> Self {
        Self {
            context_len: cfg.context_len.max(1),
            block_len: cfg.block_len.max(1),
            drift_window: cfg.drift_window.max(1),
        }
    }

    /// Drift and residual pool of a context.
    pub fn decompose(&self, context: &[f64]) -> (f64, Vec<f64>) {
        let ctx = &context[context.len().saturating_sub(self.context_len)..];
        let diffs: Vec<f64> = ctx.windows(2).map(|p| p[1] - p[0]).collect();
        if diffs.is_empty() {
            return (0.0, Vec::new());
        }
        let recent = &diffs[diffs.len().saturating_sub(self.drift_window)..];
        let drift = recent.iter().sum::<f64>() / recent.len() as f64;
        // centred on their own mean so a trend change inside the context
        // cannot leak into the level through the resampled blocks
        let centre = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let residuals = diffs.iter().map(|d| d - centre).collect();
        (drift, residuals)
    }
}

impl Forecaster for BootstrapForecaster {
    fn name(&self) -> &str {
        "builtin"
    }

    fn draw(&self, req: &ForecastRequest<'_>) -> Result<SampleMatrix> {
        let last = *req.context.last().expect("validated non-empty");
        let (drift, residuals) = self.decompose(req.context);
        let (s, h) = (req.n_samples, req.horizon);
        let mut data = Vec::with_capacity(s * h);

        if residuals.iter().all(|r| *r == 0.0) {
            for _ in 0..s {
                let mut level = last;
                for _ in 0..h {
                    level += drift;
                    data.push(level.max(MIN_DISTANCE));
                }
            }
            return SampleMatrix::new(s, h, data);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        let block = self.block_len.min(residuals.len());
        let starts = residuals.len() - block + 1;
        for _ in 0..s {
            let mut level = last;
            let mut filled = 0;
            while filled < h {
                let b = rng.random_range(0..starts);
                for r in &residuals[b..b + block] {
                    if filled == h {
                        break;
                    }
                    level += drift + r;
                    data.push(level.max(MIN_DISTANCE));
                    filled += 1;
                }
            }
        }
        SampleMatrix::new(s, h, data)
    }
}
