//! Additive delta head.
//!
//! One tanh hidden layer over eight standardized features produces the
//! correction `delta`, and the repaired reading is `observation + delta`.
//! With the default 92 hidden units the head has (8+1)*92 + (92+1) = 921
//! trainable parameters.

mod loss;
mod train;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loss::{loss, loss_and_grad, LossBreakdown, LossWeights, TrainSample, LOW_CONFIDENCE};
pub use train::{build_samples, train, EpochLog, TrainConfig, TrainOutcome, TrainingPair};

pub const N_FEATURES: usize = 8;
pub const DEFAULT_HIDDEN: usize = 92;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "depth", "conf", "mu1", "sigma1", "speed", "throttle", "steering", "dt",
];

/// Raw (unstandardized) head input, ordered as [`FEATURE_NAMES`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        depth: f64,
        conf: f64,
        mu1: f64,
        sigma1: f64,
        speed: f64,
        throttle: f64,
        steering: f64,
        dt: f64,
    ) -> Self {
        Self([depth, conf, mu1, sigma1, speed, throttle, steering, dt])
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(ch) => Err(Error::NonFiniteFeature(ch)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: [f64; N_FEATURES],
    pub scale: [f64; N_FEATURES],
}

impl Default for FeatureNorm {
    fn default() -> Self {
        Self {
            mean: [0.0; N_FEATURES],
            scale: [1.0; N_FEATURES],
        }
    }
}

impl FeatureNorm {
    /// Per-channel mean and population standard deviation; channels with no
    /// spread are only centred.
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a FeatureVector>) -> Self {
        let mut n = 0.0;
        let mut sum = [0.0; N_FEATURES];
        let mut sq = [0.0; N_FEATURES];
        let all: Vec<&FeatureVector> = features.into_iter().collect();
        for f in &all {
            n += 1.0;
            for c in 0..N_FEATURES {
                sum[c] += f.0[c];
            }
        }
        if n == 0.0 {
            return Self::default();
        }
        let mean = sum.map(|s| s / n);
        for f in &all {
            for c in 0..N_FEATURES {
                sq[c] += (f.0[c] - mean[c]).powi(2);
            }
        }
        let mut scale = [1.0; N_FEATURES];
        for c in 0..N_FEATURES {
            let sd = (sq[c] / n).sqrt();
            if sd > 1e-9 * (1.0 + mean[c].abs()) {
                scale[c] = sd;
            }
        }
        Self { mean, scale }
    }

    pub fn apply(&self, f: &FeatureVector) -> [f64; N_FEATURES] {
        let mut x = [0.0; N_FEATURES];
        for c in 0..N_FEATURES {
            x[c] = (f.0[c] - self.mean[c]) / self.scale[c];
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub inputs: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub outputs: usize,
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl Architecture {
    pub fn with_hidden(hidden: usize) -> Self {
        Self {
            inputs: N_FEATURES,
            hidden,
            activation: Activation::Tanh,
            outputs: 1,
        }
    }

    pub fn parameter_count(&self) -> usize {
        (self.inputs + 1) * self.hidden + (self.hidden + 1) * self.outputs
    }
}

impl Default for Architecture {
    fn default() -> Self {
        Self::with_hidden(DEFAULT_HIDDEN)
    }
}

/// Parameters are stored flat: hidden weights (row-major, hidden x inputs),
/// hidden biases, output weights, output bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaHead {
    pub architecture: Architecture,
    pub weights: Vec<f64>,
    pub norm: FeatureNorm,
}

impl DeltaHead {
    pub fn zeros(architecture: Architecture) -> Self {
        Self {
            architecture,
            weights: vec![0.0; architecture.parameter_count()],
            norm: FeatureNorm::default(),
        }
    }

    /// Glorot-uniform hidden layer, near-zero output layer.
    pub fn init(architecture: Architecture, norm: FeatureNorm, seed: u64) -> Self {
        let mut head = Self::zeros(architecture);
        head.norm = norm;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = architecture.hidden;
        let limit = (6.0 / (N_FEATURES + h) as f64).sqrt();
        for w in &mut head.weights[..h * N_FEATURES] {
            *w = rng.random_range(-limit..limit);
        }
        let o = head.out_offset();
        for w in &mut head.weights[o..o + h] {
            *w = rng.random_range(-0.01..0.01);
        }
        head
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len()
    }

    fn hidden(&self) -> usize {
        self.architecture.hidden
    }

    fn bias_offset(&self) -> usize {
        self.hidden() * N_FEATURES
    }

    fn out_offset(&self) -> usize {
        self.bias_offset() + self.hidden()
    }

    fn out_bias_index(&self) -> usize {
        self.out_offset() + self.hidden()
    }

    /// Forward pass on a standardized input, leaving hidden activations in
    /// `act`.
    pub(crate) fn forward_into(&self, x: &[f64; N_FEATURES], act: &mut [f64]) -> f64 {
        let h = self.hidden();
        let w = &self.weights;
        let bo = self.bias_offset();
        let oo = self.out_offset();
        let mut out = w[self.out_bias_index()];
        for j in 0..h {
            let row = &w[j * N_FEATURES..(j + 1) * N_FEATURES];
            let mut z = w[bo + j];
            for i in 0..N_FEATURES {
                z += row[i] * x[i];
            }
            let a = z.tanh();
            act[j] = a;
            out += w[oo + j] * a;
        }
        out
    }

    /// Accumulates `g * d(delta)/d(params)` into `grad`.
    pub(crate) fn backward_into(&self, x: &[f64; N_FEATURES], act: &[f64], g: f64, grad: &mut [f64]) {
        let h = self.hidden();
        let bo = self.bias_offset();
        let oo = self.out_offset();
        grad[self.out_bias_index()] += g;
        for j in 0..h {
            let a = act[j];
            grad[oo + j] += g * a;
            let dz = g * self.weights[oo + j] * (1.0 - a * a);
            grad[bo + j] += dz;
            let row = &mut grad[j * N_FEATURES..(j + 1) * N_FEATURES];
            for i in 0..N_FEATURES {
                row[i] += dz * x[i];
            }
        }
    }

    pub fn predict_delta(&self, f: &FeatureVector) -> Result<f64> {
        f.check_finite()?;
        let x = self.norm.apply(f);
        let mut act = vec![0.0; self.hidden()];
        Ok(self.forward_into(&x, &mut act))
    }

    /// Sets the output layer to the constant `bias` (all output weights zero).
    pub fn set_constant_output(&mut self, bias: f64) {
        let oo = self.out_offset();
        let h = self.hidden();
        self.weights[oo..oo + h].iter_mut().for_each(|w| *w = 0.0);
        let b = self.out_bias_index();
        self.weights[b] = bias;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let head: Self = serde_json::from_str(&text)?;
        if head.architecture.inputs != N_FEATURES || head.architecture.outputs != 1 {
            return Err(Error::config("delta head must map 8 features to 1 output"));
        }
        if head.weights.len() != head.architecture.parameter_count() {
            return Err(Error::config(format!(
                "head has {} weights, architecture needs {}",
                head.weights.len(),
                head.architecture.parameter_count()
            )));
        }
        Ok(head)
    }
}
