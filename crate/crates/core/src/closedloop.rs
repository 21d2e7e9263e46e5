//! Stop-sign approach with detection-suppression attacks.
//!
//! The vehicle drives toward a sign at constant speed; a detector reports the
//! distance while the sign is ahead. Once detection has been stable and the
//! vehicle is near the trigger zone, an attack window suppresses detections
//! frame by frame. The controller brakes after `k_confirm` consecutive
//! distance readings at or below `trigger_dist`; frames without a reading are
//! skipped rather than counted against the run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{SensorFrame, SensorSequence, SequenceMeta};
use crate::error::{Error, Result};
use crate::forecast::step_seed;
use crate::gatefuse::{ContextTracker, OnlineRepair};
use crate::metrics::{closed_loop_aggregate, ClosedLoopAggregate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub d0: f64,
    pub v: f64,
    pub fps: f64,
    pub trigger_dist: f64,
    pub k_confirm: usize,
    pub decel: f64,
    pub d_safe: f64,
    /// Attack window length in seconds.
    pub t_atk: f64,
    /// Per-frame suppression probability inside the window.
    pub rho: f64,
    /// The first window opens once detection is stable and the distance is
    /// below `trigger_dist + U(0, onset_spread)`.
    pub onset_spread: f64,
    pub cooldown: f64,
    pub max_episodes: usize,
    pub depth_noise: f64,
    pub lidar_noise: f64,
    pub max_time: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            d0: 3.0,
            v: 0.6,
            fps: 16.0,
            trigger_dist: 0.70,
            k_confirm: 3,
            decel: 2.0,
            d_safe: 0.60,
            t_atk: 1.0,
            rho: 1.0,
            onset_spread: 0.2,
            cooldown: 1.0,
            max_episodes: 1,
            depth_noise: 0.01,
            lidar_noise: 0.01,
            max_time: 60.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.d0 > self.trigger_dist
            && self.trigger_dist > self.d_safe
            && self.d_safe > 0.0
            && self.fps > 0.0
            && self.v > 0.0
            && self.decel > 0.0
            && self.k_confirm >= 1
            && (0.0..=1.0).contains(&self.rho)
            && self.t_atk >= 0.0
            && self.onset_spread >= 0.0
            && self.cooldown >= 0.0
            && self.depth_noise >= 0.0
            && self.lidar_noise >= 0.0
            && self.max_time > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid scenario {self:?}")))
        }
    }

    /// Window length in frames.
    pub fn attack_frames(&self) -> usize {
        (self.t_atk * self.fps).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Defense {
    None,
    Odca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    /// Braked, but stopped past the sign.
    Late,
    /// Braked, but stopped short of the compliance zone.
    Early,
    Missed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub t: f64,
    pub true_dist: f64,
    pub detected: bool,
    pub suppressed: bool,
    pub reported_depth: Option<f64>,
    pub lidar: Option<f64>,
    pub conf: f64,
    pub speed: f64,
    pub throttle: f64,
    pub fused_dist: Option<f64>,
    pub brake: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub seed: u64,
    pub frames: Vec<FrameRecord>,
    pub outcome: Outcome,
    pub d_brake_final: f64,
    pub latency: Option<f64>,
    pub lost_detection_frames: usize,
    pub episodes: usize,
}

const NOMINAL_CONF: f64 = 0.92;

fn throttle_for(speed: f64) -> f64 {
    0.2 * speed
}

/// One trial. `repair` is required for [`Defense::Odca`].
pub fn run_trial(cfg: &ScenarioConfig, defense: Defense, repair: Option<&OnlineRepair<'_>>) -> Result<TrialLog> {
    cfg.validate()?;
    let repair = match (defense, repair) {
        (Defense::Odca, None) => return Err(Error::config("the odca defense needs a trained head")),
        (Defense::Odca, r) => r,
        (Defense::None, _) => None,
    };
    // independent streams so attack parameters never shift the noise
    let mut noise_rng = ChaCha8Rng::seed_from_u64(step_seed(cfg.seed, 1));
    let mut sup_rng = ChaCha8Rng::seed_from_u64(step_seed(cfg.seed, 2));
    let mut onset_rng = ChaCha8Rng::seed_from_u64(step_seed(cfg.seed, 3));
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let onset_dist = cfg.trigger_dist + cfg.onset_spread * onset_rng.random::<f64>();

    let dt = 1.0 / cfg.fps;
    let n_atk = cfg.attack_frames();
    let max_frames = (cfg.max_time * cfg.fps).ceil() as usize;

    let (mut dist, mut speed) = (cfg.d0, cfg.v);
    let mut braking = false;
    let mut stable = 0usize;
    let mut run = 0usize;
    let mut run_start = 0.0;
    let mut trigger_run_start: Option<f64> = None;
    let mut t_cross: Option<f64> = None;
    let mut window: Option<(usize, usize)> = None;
    let mut next_allowed = 0usize;
    let mut episodes = 0usize;
    let mut lost = 0usize;
    let mut history: Vec<Option<f64>> = Vec::new();
    let mut tracker = ContextTracker::new();
    let mut frames = Vec::new();

    for k in 0..max_frames {
        let t = k as f64 * dt;
        let u: f64 = sup_rng.random();
        let (n_depth, n_lidar, u_conf): (f64, f64, f64) =
            (std_normal.sample(&mut noise_rng), std_normal.sample(&mut noise_rng), noise_rng.random());
        let in_window = window.is_some_and(|(a, b)| (a..b).contains(&k));
        let suppressed = in_window && u < cfg.rho;
        if suppressed {
            lost += 1;
        }
        let visible = dist > 0.0;
        let detected = visible && !suppressed;
        let reported_depth = detected.then(|| (dist + cfg.depth_noise * n_depth).max(1e-3));
        let conf = if detected {
            NOMINAL_CONF + 0.04 * (u_conf - 0.5)
        } else {
            0.05 * u_conf
        };
        let lidar = visible.then(|| (dist + cfg.lidar_noise * n_lidar).max(1e-3));
        if t_cross.is_none() && dist <= cfg.d_safe {
            t_cross = Some(t);
        }

        let fused_dist = match repair {
            None => reported_depth,
            Some(r) => {
                let frame = SensorFrame {
                    t,
                    depth: reported_depth,
                    conf,
                    lidar,
                    speed,
                    throttle: throttle_for(speed),
                    steering: 0.0,
                };
                let context = if let Some(d) = reported_depth.filter(|_| history.is_empty()) {
                    Some(vec![d])
                } else if history.is_empty() {
                    None
                } else {
                    let start = history.len().saturating_sub(r.forecast.context_len);
                    Some(history[start..].iter().map(|v| v.expect("fused values present")).collect())
                };
                match context {
                    Some(c) => {
                        let out = r.step(&frame, &c, dt, step_seed(cfg.seed ^ 0xc105ed, k as u64))?;
                        history.push(Some(tracker.push(&frame, &out)));
                        Some(out.d_fused)
                    }
                    None => None,
                }
            }
        };

        // attack scheduling
        stable = if detected { stable + 1 } else { 0 };
        if window.is_none_or(|(_, b)| k >= b) && episodes < cfg.max_episodes && n_atk > 0 && k >= next_allowed {
            let near = episodes > 0 || dist <= onset_dist;
            if stable >= cfg.k_confirm && near {
                window = Some((k + 1, k + 1 + n_atk));
                next_allowed = k + 1 + n_atk + (cfg.cooldown * cfg.fps).round() as usize;
                episodes += 1;
            }
        }

        // controller
        // frames without a reading neither extend nor break the run
        if !braking {
            match fused_dist {
                Some(d) if d <= cfg.trigger_dist => {
                    run += 1;
                    if run == 1 {
                        run_start = t;
                    }
                    if run >= cfg.k_confirm {
                        braking = true;
                        trigger_run_start = Some(run_start);
                    }
                }
                Some(_) => run = 0,
                None => {}
            }
        }

        frames.push(FrameRecord {
            t,
            true_dist: dist,
            detected,
            suppressed,
            reported_depth,
            lidar,
            conf,
            speed,
            throttle: throttle_for(speed),
            fused_dist,
            brake: braking,
        });

        // kinematics to the next frame
        if braking {
            let travel = if speed <= cfg.decel * dt {
                speed * speed / (2.0 * cfg.decel)
            } else {
                speed * dt - 0.5 * cfg.decel * dt * dt
            };
            dist -= travel;
            speed = (speed - cfg.decel * dt).max(0.0);
        } else {
            dist -= speed * dt;
        }

        if speed == 0.0 || dist < -0.5 {
            // the rest of an open window still counts toward lost frames
            if let Some((_, b)) = window {
                for _ in k + 1..b {
                    if sup_rng.random::<f64>() < cfg.rho {
                        lost += 1;
                    }
                }
            }
            break;
        }
    }
    if t_cross.is_none() && dist <= cfg.d_safe {
        t_cross = Some(frames.len() as f64 * dt);
    }

    let outcome = match (trigger_run_start, speed == 0.0) {
        (Some(_), true) if (0.0..=cfg.d_safe).contains(&dist) => Outcome::Success,
        (Some(_), true) if dist > cfg.d_safe => Outcome::Early,
        (Some(_), _) => Outcome::Late,
        (None, _) => Outcome::Missed,
    };
    // a run that began inside the zone reached it immediately
    let latency = match (outcome, trigger_run_start, t_cross) {
        (Outcome::Success, Some(a), Some(c)) => Some((c - a).max(0.0)),
        _ => None,
    };
    Ok(TrialLog {
        seed: cfg.seed,
        frames,
        outcome,
        d_brake_final: dist,
        latency,
        lost_detection_frames: lost,
        episodes,
    })
}

/// The sensor trace of a trial as a clean-labelled sequence.
pub fn recording(log: &TrialLog, id: impl Into<String>) -> Result<SensorSequence> {
    let frames: Vec<SensorFrame> = log
        .frames
        .iter()
        .map(|f| SensorFrame {
            t: f.t,
            depth: f.reported_depth,
            conf: f.conf,
            lidar: f.lidar,
            speed: f.speed,
            throttle: f.throttle,
            steering: 0.0,
        })
        .collect();
    let n = frames.len();
    SensorSequence::new(id.into(), frames, Some(vec![None; n]), SequenceMeta::default())
}

/// Unattacked approach-and-stop recordings from the scenario itself, for
/// fitting a head to the platform. Start distances are spread over
/// `[d0, d0 + 1]` so the set covers more than one approach.
pub fn platform_recordings(cfg: &ScenarioConfig, n: usize, seed0: u64) -> Result<Vec<SensorSequence>> {
    (0..n as u64)
        .map(|i| {
            let seed = seed0 + i;
            let mut rng = ChaCha8Rng::seed_from_u64(step_seed(seed, 4));
            let trial = ScenarioConfig {
                d0: cfg.d0 + rng.random::<f64>(),
                t_atk: 0.0,
                seed,
                ..*cfg
            };
            let log = run_trial(&trial, Defense::None, None)?;
            recording(&log, format!("run{i:03}"))
        })
        .collect()
}

/// Trials with seeds `seed0, seed0 + 1, ...`.
pub fn run_batch(
    cfg: &ScenarioConfig,
    n_trials: usize,
    defense: Defense,
    repair: Option<&OnlineRepair<'_>>,
    seed0: u64,
) -> Result<(Vec<TrialLog>, ClosedLoopAggregate)> {
    if n_trials == 0 {
        return Err(Error::config("need at least one trial"));
    }
    let logs = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| run_trial(&ScenarioConfig { seed: seed0 + i, ..*cfg }, defense, repair))
        .collect::<Result<Vec<_>>>()?;
    let agg = closed_loop_aggregate(
        &logs
            .iter()
            .map(|l| (l.outcome == Outcome::Success, l.latency))
            .collect::<Vec<_>>(),
    )?;
    Ok((logs, agg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t_atk: f64,
    pub lost_frames_mean: f64,
    pub lost_frames_min: usize,
    pub lost_frames_max: usize,
    pub asr: f64,
    pub scr: f64,
    pub n_trials: usize,
}

pub fn persistence_sweep(
    cfg: &ScenarioConfig,
    durations: &[f64],
    defense: Defense,
    repair: Option<&OnlineRepair<'_>>,
    n_trials: usize,
    seed0: u64,
) -> Result<Vec<SweepRow>> {
    if durations.is_empty() {
        return Err(Error::config("persistence sweep needs at least one duration"));
    }
    durations
        .iter()
        .map(|&t_atk| {
            let (logs, agg) = run_batch(&ScenarioConfig { t_atk, ..*cfg }, n_trials, defense, repair, seed0)?;
            let lost: Vec<usize> = logs.iter().map(|l| l.lost_detection_frames).collect();
            Ok(SweepRow {
                t_atk,
                lost_frames_mean: lost.iter().sum::<usize>() as f64 / lost.len() as f64,
                lost_frames_min: *lost.iter().min().expect("non-empty"),
                lost_frames_max: *lost.iter().max().expect("non-empty"),
                asr: agg.asr,
                scr: agg.scr,
                n_trials,
            })
        })
        .collect()
}

/// Sweep rows of one or more defenses, lost-frame counts first.
pub fn sweep_csv(runs: &[(Defense, Vec<SweepRow>)]) -> String {
    let mut s = String::from("defense,t_atk,lost_frames_min,lost_frames_max,lost_frames_mean,asr,scr,n_trials\n");
    for (defense, rows) in runs {
        let name = match defense {
            Defense::None => "none",
            Defense::Odca => "odca",
        };
        for r in rows {
            s.push_str(&format!(
                "{name},{},{},{},{},{},{},{}\n",
                r.t_atk, r.lost_frames_min, r.lost_frames_max, r.lost_frames_mean, r.asr, r.scr, r.n_trials
            ));
        }
    }
    s
}
