use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use odca_core::closedloop::ScenarioConfig;
use odca_core::data::SequenceFormat;
use odca_core::pipeline::BenchmarkConfig;
use odca_core::synth::SynthConfig;
use serde::{Deserialize, Serialize};

/// Everything a run can be configured with. Loaded from TOML, then
/// overridden by command-line flags, then validated before any work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces every nested seed.
    pub seed: Option<u64>,
    /// File format written by `gen` and `attack`.
    pub format: SequenceFormat,
    pub synth: SynthConfig,
    pub benchmark: BenchmarkConfig,
    pub scenario: ScenarioConfig,
    pub closedloop: ClosedLoopSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            format: SequenceFormat::Csv,
            synth: SynthConfig::default(),
            benchmark: BenchmarkConfig::default(),
            scenario: ScenarioConfig::default(),
            closedloop: ClosedLoopSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClosedLoopSettings {
    pub n_trials: usize,
    /// Attack durations of the persistence sweep, seconds.
    pub durations: Vec<f64>,
    /// Unattacked scenario runs used to fit a platform head.
    pub platform_recordings: usize,
}

impl Default for ClosedLoopSettings {
    fn default() -> Self {
        Self {
            n_trials: 100,
            durations: vec![0.5, 1.0, 3.0],
            platform_recordings: 120,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Spreads the top-level seed and checks every group.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(seed) = self.seed {
            self.synth.seed = seed;
            self.benchmark.seed = seed;
            self.benchmark.train.seed = seed;
            self.scenario.seed = seed;
        }
        self.synth.validate()?;
        self.benchmark.validate()?;
        self.scenario.validate()?;
        let cl = &self.closedloop;
        if cl.n_trials == 0 || cl.platform_recordings < 2 {
            bail!("closedloop.n_trials must be positive and closedloop.platform_recordings at least 2");
        }
        if cl.durations.is_empty() || cl.durations.iter().any(|d| !(*d >= 0.0)) {
            bail!("closedloop.durations must be a non-empty list of non-negative seconds");
        }
        Ok(self)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
