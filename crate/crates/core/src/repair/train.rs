use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss, loss_and_grad, LossBreakdown, LossWeights, TrainSample};
use super::{Architecture, DeltaHead, FeatureNorm};
use crate::align::AffineAlignment;
use crate::data::{fill_window, SensorSequence};
use crate::error::{Error, Result};
use crate::forecast::{step_seed, ForecastConfig, Forecaster};
use crate::gatefuse::{features, frame_dt, ContextTracker, GateConfig, OnlineRepair};

/// A clean reference and a corrupted copy of the same recording.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub clean: SensorSequence,
    pub attacked: SensorSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub patience: usize,
    pub hidden: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            learning_rate: 1e-3,
            momentum: 0.9,
            patience: 20,
            hidden: super::DEFAULT_HIDDEN,
            seed: 0,
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::config("batch_size and hidden must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("need learning_rate > 0 and momentum in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: Option<LossBreakdown>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: DeltaHead,
    /// Entry 0 is the initialization, before any update.
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Turns pairs into training samples. The forecast context is built exactly
/// as on the online path, which it can be because that context never
/// depends on the head; seeds match too.
pub fn build_samples(
    pairs: &[TrainingPair],
    alignment: &AffineAlignment,
    gate: &GateConfig,
    fcfg: &ForecastConfig,
    forecaster: &dyn Forecaster,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    let online = OnlineRepair {
        head: &DeltaHead::zeros(Architecture::with_hidden(1)),
        alignment: *alignment,
        gate: *gate,
        forecast: *fcfg,
        forecaster,
    };
    let per_pair = pairs
        .par_iter()
        .map(|p| pair_samples(p, &online, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(per_pair.iter().map(Vec::len).sum());
    for mut block in per_pair {
        let offset = out.len();
        for s in &mut block {
            s.next = s.next.map(|n| n + offset);
        }
        out.extend(block);
    }
    Ok(out)
}

fn pair_samples(pair: &TrainingPair, online: &OnlineRepair<'_>, seed: u64) -> Result<Vec<TrainSample>> {
    let fcfg = &online.forecast;
    let (clean, attacked) = (&pair.clean, &pair.attacked);
    if clean.len() != attacked.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: attacked.len(),
        });
    }
    let clean_depth = clean.depth();
    let obs_depth = attacked.depth();
    let ts = attacked.timestamps();
    let n = attacked.len();
    let mut out = Vec::with_capacity(n);
    let mut history: Vec<Option<f64>> = Vec::with_capacity(n);
    let mut tracker = ContextTracker::new();
    for (t, frame) in attacked.frames().iter().enumerate() {
        let context = if t == 0 {
            fill_window(&obs_depth, 0, fcfg.context_len).or_else(|_| fill_window(&clean_depth, 0, fcfg.context_len))?
        } else {
            fill_window(&history, t - 1, fcfg.context_len)?
        };
        let dt = frame_dt(&ts, t);
        let step = online.step(frame, &context, dt, step_seed(seed, t as u64))?;
        history.push(Some(tracker.push(frame, &step)));
        let f = features(frame, step.mu1, step.sigma1, dt);
        let obs = step.d_obs;
        f.check_finite()?;
        let cons_target = frame
            .lidar
            .map(|l| online.alignment.align(l))
            .filter(|l| (obs - l).abs() > online.gate.tau_low);
        out.push(TrainSample {
            features: f,
            observation: obs,
            clean: clean_depth[t],
            cons_target,
            attacked: attacked.is_attacked(t),
            speed: frame.speed,
            dt: if t + 1 < n { ts[t + 1] - ts[t] } else { 0.0 },
            next: (t + 1 < n).then_some(t + 1),
        });
    }
    Ok(out)
}

/// Mini-batch momentum descent on the weighted objective. Updates use the
/// objective divided by its largest weight, so the step size does not scale
/// with the overall magnitude of the weights; the minimizer is unchanged.
pub fn train(train: &[TrainSample], val: &[TrainSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let norm = FeatureNorm::fit(train.iter().map(|s| &s.features));
    let mut head = DeltaHead::init(Architecture::with_hidden(cfg.hidden), norm, cfg.seed);
    let w = &cfg.weights;
    let scale = [w.lambda_id, w.lambda_delta0, w.lambda_cons, w.lambda_kin]
        .into_iter()
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::config("at least one loss weight must be positive"));
    }
    let step = cfg.learning_rate / scale;

    let all_train: Vec<usize> = (0..train.len()).collect();
    let all_val: Vec<usize> = (0..val.len()).collect();
    let evaluate = |head: &DeltaHead, epoch: usize| -> Result<EpochLog> {
        let tl = loss(head, train, &all_train, w)?;
        let vl = if val.is_empty() {
            None
        } else {
            Some(loss(head, val, &all_val, w)?)
        };
        if !tl.is_finite() || vl.is_some_and(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged { epoch });
        }
        Ok(EpochLog { epoch, train: tl, val: vl })
    };
    let criterion = |e: &EpochLog| e.val.map_or(e.train.total, |v| v.total);

    let mut log = vec![evaluate(&head, 0)?];
    let mut best = (criterion(&log[0]), 0, head.clone());
    let mut velocity = vec![0.0; head.parameter_count()];
    let mut order = all_train.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (l, grad) = loss_and_grad(&head, train, batch, w)?;
            if !l.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            for ((p, v), g) in head.weights.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - step * g;
                *p += *v;
            }
        }
        let entry = evaluate(&head, epoch)?;
        let c = criterion(&entry);
        log.push(entry);
        if c < best.0 {
            best = (c, epoch, head.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        head: best.2,
        log,
        best_epoch: best.1,
    })
}
