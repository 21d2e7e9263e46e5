//! Corruption-aware training objective.
//!
//! * identity: repaired vs clean reference on frames that are unattacked or
//!   still high-confidence, boosted on attacked or low-confidence ones;
//! * minimal change: squared correction on clean frames;
//! * cross-sensor consistency: repaired vs aligned LiDAR on frames whose
//!   depth/LiDAR residual exceeds the lower gate threshold (boosted);
//! * kinematics: first differences of the repaired signal against `-v*dt`.

use serde::{Deserialize, Serialize};

use super::{DeltaHead, FeatureVector};
use crate::error::{Error, Result};

/// Confidence under which a frame counts as low-confidence for the boost.
pub const LOW_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_id: f64,
    pub lambda_delta0: f64,
    pub lambda_cons: f64,
    pub lambda_kin: f64,
    pub attacked_region_boost: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_id: 1.0,
            lambda_delta0: 0.1,
            lambda_cons: 0.5,
            lambda_kin: 0.2,
            attacked_region_boost: 4.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let l = [self.lambda_id, self.lambda_delta0, self.lambda_cons, self.lambda_kin];
        if l.iter().all(|v| *v >= 0.0 && v.is_finite()) && self.attacked_region_boost >= 1.0 {
            Ok(())
        } else {
            Err(Error::config(format!("invalid loss weights {self:?}")))
        }
    }

    /// Keeps only the selected terms of `self`.
    pub fn subset(&self, id: bool, delta0: bool, cons: bool, kin: bool) -> Self {
        let pick = |on: bool, v: f64| if on { v } else { 0.0 };
        Self {
            lambda_id: pick(id, self.lambda_id),
            lambda_delta0: pick(delta0, self.lambda_delta0),
            lambda_cons: pick(cons, self.lambda_cons),
            lambda_kin: pick(kin, self.lambda_kin),
            attacked_region_boost: self.attacked_region_boost,
        }
    }
}

/// One training frame with everything the objective needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub features: FeatureVector,
    /// Working observation the correction is added to.
    pub observation: f64,
    pub clean: Option<f64>,
    /// Aligned LiDAR when the frame is in the consistency region.
    pub cons_target: Option<f64>,
    pub attacked: bool,
    pub speed: f64,
    pub dt: f64,
    /// Index of the following frame of the same sequence.
    pub next: Option<usize>,
}

impl TrainSample {
    /// Frames the identity term sees: unattacked or still high-confidence.
    fn in_identity(&self) -> bool {
        !self.attacked || self.features.0[1] >= LOW_CONFIDENCE
    }

    fn boost(&self, w: &LossWeights) -> f64 {
        if self.attacked || self.features.0[1] < LOW_CONFIDENCE {
            w.attacked_region_boost
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub id: f64,
    pub delta0: f64,
    pub cons: f64,
    pub kin: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.id, self.delta0, self.cons, self.kin]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn loss(
    head: &DeltaHead,
    samples: &[TrainSample],
    batch: &[usize],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    evaluate(head, samples, batch, weights, false).map(|(l, _)| l)
}

pub fn loss_and_grad(
    head: &DeltaHead,
    samples: &[TrainSample],
    batch: &[usize],
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    evaluate(head, samples, batch, weights, true)
}

fn evaluate(
    head: &DeltaHead,
    samples: &[TrainSample],
    batch: &[usize],
    weights: &LossWeights,
    want_grad: bool,
) -> Result<(LossBreakdown, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut needed: Vec<usize> = batch.to_vec();
    needed.extend(batch.iter().filter_map(|&i| samples[i].next));
    needed.sort_unstable();
    needed.dedup();
    let slot = |i: usize| needed.binary_search(&i).expect("index gathered");

    let h = head.architecture.hidden;
    let mut xs = Vec::with_capacity(needed.len());
    let mut acts = vec![0.0; needed.len() * h];
    let mut rep = Vec::with_capacity(needed.len());
    let mut delta = Vec::with_capacity(needed.len());
    for (k, &i) in needed.iter().enumerate() {
        let s = &samples[i];
        let x = head.norm.apply(&s.features);
        let d = head.forward_into(&x, &mut acts[k * h..(k + 1) * h]);
        xs.push(x);
        delta.push(d);
        rep.push(s.observation + d);
    }
    // dL/d(delta) per slot
    let mut g = vec![0.0; needed.len()];
    let mut out = LossBreakdown::default();

    let (mut sum_b, mut acc) = (0.0, 0.0);
    for &i in batch {
        if let Some(c) = samples[i].clean.filter(|_| samples[i].in_identity()) {
            let b = samples[i].boost(weights);
            sum_b += b;
            acc += b * (rep[slot(i)] - c).powi(2);
        }
    }
    if sum_b > 0.0 {
        out.id = acc / sum_b;
        for &i in batch {
            if let Some(c) = samples[i].clean.filter(|_| samples[i].in_identity()) {
                let k = slot(i);
                g[k] += weights.lambda_id * 2.0 * samples[i].boost(weights) * (rep[k] - c) / sum_b;
            }
        }
    }

    let clean: Vec<usize> = batch.iter().copied().filter(|&i| !samples[i].attacked).collect();
    if !clean.is_empty() {
        let n = clean.len() as f64;
        out.delta0 = clean.iter().map(|&i| delta[slot(i)].powi(2)).sum::<f64>() / n;
        for &i in &clean {
            let k = slot(i);
            g[k] += weights.lambda_delta0 * 2.0 * delta[k] / n;
        }
    }

    let (mut sum_b, mut acc) = (0.0, 0.0);
    for &i in batch {
        if let Some(l) = samples[i].cons_target {
            let b = samples[i].boost(weights);
            sum_b += b;
            acc += b * (rep[slot(i)] - l).powi(2);
        }
    }
    if sum_b > 0.0 {
        out.cons = acc / sum_b;
        for &i in batch {
            if let Some(l) = samples[i].cons_target {
                let k = slot(i);
                g[k] += weights.lambda_cons * 2.0 * samples[i].boost(weights) * (rep[k] - l) / sum_b;
            }
        }
    }

    let pairs: Vec<(usize, usize)> = batch
        .iter()
        .filter_map(|&i| samples[i].next.map(|n| (i, n)))
        .collect();
    if !pairs.is_empty() {
        let n = pairs.len() as f64;
        let mut acc = 0.0;
        for &(i, j) in &pairs {
            let (ki, kj) = (slot(i), slot(j));
            let r = (rep[kj] - rep[ki]) + samples[i].speed * samples[i].dt;
            acc += r * r;
            let c = weights.lambda_kin * 2.0 * r / n;
            g[kj] += c;
            g[ki] -= c;
        }
        out.kin = acc / n;
    }

    out.total = weights.lambda_id * out.id
        + weights.lambda_delta0 * out.delta0
        + weights.lambda_cons * out.cons
        + weights.lambda_kin * out.kin;

    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; head.weights.len()];
        for k in 0..needed.len() {
            if g[k] != 0.0 {
                head.backward_into(&xs[k], &acts[k * h..(k + 1) * h], g[k], &mut grad);
            }
        }
    }
    Ok((out, grad))
}

#[cfg(test)]
mod tests {
    use super::super::{Architecture, FeatureNorm};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(obs: f64, clean: Option<f64>, attacked: bool) -> TrainSample {
        TrainSample {
            features: FeatureVector::new(obs, 0.9, obs, 0.01, 1.0, 0.3, 0.0, 0.02),
            observation: obs,
            clean,
            cons_target: None,
            attacked,
            speed: 1.0,
            dt: 0.02,
            next: None,
        }
    }

    #[test]
    fn identity_on_clean_batch_is_zero() {
        let head = DeltaHead::zeros(Architecture::default());
        let s: Vec<_> = (0..10).map(|i| sample(2.0 + 0.1 * i as f64, Some(2.0 + 0.1 * i as f64), false)).collect();
        let l = loss(&head, &s, &(0..10).collect::<Vec<_>>(), &LossWeights::default()).unwrap();
        assert_eq!(l.id, 0.0);
        assert_eq!(l.delta0, 0.0);
    }

    #[test]
    fn kinematically_consistent_series_has_zero_kin() {
        let head = DeltaHead::zeros(Architecture::default());
        let v = 1.5;
        let dt = 0.02;
        let mut s: Vec<_> = (0..20)
            .map(|i| {
                let mut x = sample(5.0 - v * dt * i as f64, None, false);
                x.speed = v;
                x.dt = dt;
                x
            })
            .collect();
        for i in 0..19 {
            s[i].next = Some(i + 1);
        }
        let l = loss(&head, &s, &(0..20).collect::<Vec<_>>(), &LossWeights::default()).unwrap();
        assert!(l.kin < 1e-28, "{}", l.kin);
    }

    #[test]
    fn single_frame_identity_arithmetic() {
        let mut head = DeltaHead::zeros(Architecture::default());
        head.set_constant_output(0.3);
        let s = vec![sample(2.0, Some(1.5), true)];
        let l = loss(&head, &s, &[0], &LossWeights::default()).unwrap();
        assert!((l.id - 0.64).abs() < 1e-12, "{}", l.id);
    }

    #[test]
    fn empty_batch_rejected() {
        let head = DeltaHead::zeros(Architecture::default());
        assert!(matches!(
            loss(&head, &[], &[], &LossWeights::default()),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn boost_applies_to_attacked_frames() {
        let mut head = DeltaHead::zeros(Architecture::default());
        head.set_constant_output(1.0);
        // clean frame error 1, attacked frame error 0: weighted mean with boost 4 on the attacked
        let s = vec![sample(1.0, Some(1.0), false), sample(1.0, Some(2.0), true)];
        let l = loss(&head, &s, &[0, 1], &LossWeights::default()).unwrap();
        assert!((l.id - 1.0 / 5.0).abs() < 1e-12);
    }

    #[test]
    fn low_confidence_attacked_frames_leave_identity() {
        let head = DeltaHead::zeros(Architecture::default());
        let mut dark = sample(1.0, Some(3.0), true);
        dark.features.0[1] = 0.1;
        let s = vec![sample(1.0, Some(1.5), false), dark];
        let l = loss(&head, &s, &[0, 1], &LossWeights::default()).unwrap();
        assert!((l.id - 0.25).abs() < 1e-12);
        assert!(loss(&head, &s, &[1], &LossWeights::default()).unwrap().id == 0.0);
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<TrainSample> {
        let mut s: Vec<TrainSample> = (0..n)
            .map(|_| {
                let obs = rng.random_range(0.5..5.0);
                let attacked = rng.random_bool(0.4);
                let f = FeatureVector::new(
                    obs,
                    rng.random_range(0.0..1.0),
                    obs + rng.random_range(-0.5..0.5),
                    rng.random_range(0.0..0.2),
                    rng.random_range(0.0..2.0),
                    rng.random_range(0.0..0.5),
                    rng.random_range(-15.0..15.0),
                    0.02,
                );
                TrainSample {
                    features: f,
                    observation: obs,
                    clean: Some(obs + if attacked { rng.random_range(-1.0..1.0) } else { 0.0 }),
                    cons_target: rng.random_bool(0.5).then(|| obs + rng.random_range(-1.0..1.0)),
                    attacked,
                    speed: f.0[4],
                    dt: 0.02,
                    next: None,
                }
            })
            .collect();
        for i in 0..n - 1 {
            if rng.random_bool(0.8) {
                s[i].next = Some(i + 1);
            }
        }
        s
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let w = LossWeights::default();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for b in 0..10 {
            let s = random_batch(&mut rng, 40);
            let norm = FeatureNorm::fit(s.iter().map(|x| &x.features));
            let mut head = DeltaHead::init(Architecture::default(), norm, b);
            // a non-trivial output layer so every parameter carries gradient
            let oo = 9 * 92;
            for k in oo..oo + 93 {
                head.weights[k] = rng.random_range(-0.3..0.3);
            }
            // a batch that leaves some successors outside it
            let batch: Vec<usize> = (0..40).filter(|i| i % 3 != 2).collect();
            let (_, grad) = loss_and_grad(&head, &s, &batch, &w).unwrap();
            for _ in 0..25 {
                let k = rng.random_range(0..head.weights.len());
                let mut p = head.clone();
                p.weights[k] += h;
                let up = loss(&p, &s, &batch, &w).unwrap().total;
                p.weights[k] -= 2.0 * h;
                let down = loss(&p, &s, &batch, &w).unwrap().total;
                let fd = (up - down) / (2.0 * h);
                let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut head = DeltaHead::zeros(Architecture::default());
        head.set_constant_output(0.2);
        let mut s = vec![sample(1.0, Some(1.1), false), sample(1.3, Some(1.0), true)];
        s[1].cons_target = Some(1.05);
        s[0].next = Some(1);
        let w = LossWeights::default();
        let l = loss(&head, &s, &[0, 1], &w).unwrap();
        let expect = w.lambda_id * l.id + w.lambda_delta0 * l.delta0 + w.lambda_cons * l.cons + w.lambda_kin * l.kin;
        assert!((l.total - expect).abs() < 1e-15);
        assert!(l.id > 0.0 && l.delta0 > 0.0 && l.cons > 0.0 && l.kin > 0.0);
    }
}
