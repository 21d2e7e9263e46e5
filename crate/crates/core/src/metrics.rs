//! Recovery error, detection scores and summary ratios.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::results::ResultRow;

/// Carries the last present value forward; leading gaps stay absent.
pub fn locf(series: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut last = None;
    series
        .iter()
        .map(|v| {
            if v.is_some() {
                last = *v;
            }
            last
        })
        .collect()
}

fn paired(pred: &[Option<f64>], reference: &[Option<f64>]) -> Result<Vec<f64>> {
    if pred.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: reference.len(),
        });
    }
    let errs: Vec<f64> = pred
        .iter()
        .zip(reference)
        .filter_map(|(p, r)| Some(p.as_ref()? - r.as_ref()?))
        .collect();
    if errs.is_empty() {
        return Err(Error::NoEvaluableFrames);
    }
    Ok(errs)
}

/// Root mean squared error over frames where both series are present.
pub fn rmse(pred: &[Option<f64>], reference: &[Option<f64>]) -> Result<f64> {
    let e = paired(pred, reference)?;
    Ok((e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt())
}

pub fn mae(pred: &[Option<f64>], reference: &[Option<f64>]) -> Result<f64> {
    let e = paired(pred, reference)?;
    Ok(e.iter().map(|x| x.abs()).sum::<f64>() / e.len() as f64)
}

fn check_labels(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let pos = labels.iter().filter(|l| **l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 || scores.iter().any(|s| s.is_nan()) {
        return Err(Error::DegenerateLabels);
    }
    Ok((pos, neg))
}

/// Area under the ROC curve in Mann-Whitney form; tied pairs count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: precision at each distinct threshold weighted by the
/// recall gained there.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_labels(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let gained = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += gained;
        seen += j - i + 1;
        if gained > 0 {
            ap += (gained as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
        i = j + 1;
    }
    Ok(ap)
}

/// Detection scores and labels from a repair-path table: the cross-sensor
/// residual (zero without LiDAR) and the applied correction `|fused - obs|`
/// (`w * |delta|` where depth was absent). Rows without a label are skipped.
pub fn score_streams(rows: &[ResultRow]) -> Result<(Vec<f64>, Vec<f64>, Vec<bool>)> {
    let mut xs = Vec::new();
    let mut chg = Vec::new();
    let mut labels = Vec::new();
    for r in rows {
        if r.label.is_empty() {
            continue;
        }
        let (Some(fused), Some(w)) = (r.d_fused, r.w) else {
            return Err(Error::config("score streams need a repair table with d_fused and w"));
        };
        xs.push(r.r_xs.unwrap_or(0.0));
        chg.push(match r.d_tilde {
            Some(d) => (fused - d).abs(),
            None => w * r.r_delta.unwrap_or(0.0),
        });
        labels.push(r.label != "clean");
    }
    Ok((xs, chg, labels))
}

/// `(strong - weak) / weak`.
pub fn bounded_degradation(rmse_weak: f64, rmse_strong: f64) -> Result<f64> {
    if !(rmse_weak > 0.0) {
        return Err(Error::config(format!("bounded degradation needs rmse_weak > 0, got {rmse_weak}")));
    }
    Ok((rmse_strong - rmse_weak) / rmse_weak)
}

/// Per-severity `1 - ours / reference` and its mean.
pub fn rgr(ours: &[f64], reference: &[f64]) -> Result<(Vec<f64>, f64)> {
    if ours.len() != reference.len() || ours.is_empty() {
        return Err(Error::LengthMismatch {
            left: ours.len(),
            right: reference.len(),
        });
    }
    if reference.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::config("resilience gain needs positive reference errors"));
    }
    let per: Vec<f64> = ours.iter().zip(reference).map(|(o, r)| 1.0 - o / r).collect();
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((per, mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopAggregate {
    pub n_trials: usize,
    pub n_success: usize,
    pub scr: f64,
    pub asr: f64,
    /// Over successful trials only.
    pub latency_mean: Option<f64>,
    pub latency_std: Option<f64>,
}

/// Aggregates `(success, latency)` per trial; latency statistics use the
/// successful trials and the population standard deviation.
pub fn closed_loop_aggregate(trials: &[(bool, Option<f64>)]) -> Result<ClosedLoopAggregate> {
    if trials.is_empty() {
        return Err(Error::config("closed-loop aggregate needs at least one trial"));
    }
    let lat: Vec<f64> = trials.iter().filter(|t| t.0).filter_map(|t| t.1).collect();
    let n_success = trials.iter().filter(|t| t.0).count();
    let scr = n_success as f64 / trials.len() as f64;
    let (latency_mean, latency_std) = if lat.is_empty() {
        (None, None)
    } else {
        let m = lat.iter().sum::<f64>() / lat.len() as f64;
        let v = lat.iter().map(|x| (x - m).powi(2)).sum::<f64>() / lat.len() as f64;
        (Some(m), Some(v.sqrt()))
    };
    Ok(ClosedLoopAggregate {
        n_trials: trials.len(),
        n_success,
        scr,
        asr: 1.0 - scr,
        latency_mean,
        latency_std,
    })
}

/// Radar-axis form of bounded degradation where higher is better.
pub fn inverted_bd(bd: f64) -> f64 {
    1.0 / (1.0 + bd)
}

/// Exhaustive pairwise AUROC; quadratic, for checking [`auroc`].
pub fn auroc_pairwise(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut wins = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            wins += match scores[i].partial_cmp(&scores[j]) {
                Some(Ordering::Greater) => 1.0,
                Some(Ordering::Equal) => 0.5,
                _ => 0.0,
            };
        }
    }
    Ok(wins / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn some(v: &[f64]) -> Vec<Option<f64>> {
        v.iter().map(|x| Some(*x)).collect()
    }

    #[test]
    fn two_point_errors() {
        let (p, r) = (some(&[1.0, 2.0]), some(&[1.0, 4.0]));
        assert!((rmse(&p, &r).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(mae(&p, &r).unwrap(), 1.0);
        assert_eq!(rmse(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn absent_reference_excluded() {
        let p = some(&[1.0, 5.0, 2.0]);
        let r = vec![Some(1.0), None, Some(2.0)];
        assert_eq!(rmse(&p, &r).unwrap(), 0.0);
        assert!(matches!(rmse(&p, &[None, None, None]), Err(Error::NoEvaluableFrames)));
    }

    #[test]
    fn rmse_dominates_mae() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let n = rng.random_range(1..30);
            let p: Vec<_> = (0..n).map(|_| Some(rng.random_range(-5.0..5.0))).collect();
            let r: Vec<_> = (0..n).map(|_| Some(rng.random_range(-5.0..5.0))).collect();
            assert!(rmse(&p, &r).unwrap() >= mae(&p, &r).unwrap() - 1e-12);
        }
    }

    #[test]
    fn auroc_examples() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [false, false, true, true];
        assert_eq!(auroc(&s, &l).unwrap(), 0.75);
        let sep = [0.1, 0.2, 0.8, 0.9];
        assert_eq!(auroc(&sep, &l).unwrap(), 1.0);
        assert_eq!(auprc(&sep, &l).unwrap(), 1.0);
        let inv = [true, true, false, false];
        assert_eq!(auroc(&sep, &inv).unwrap(), 0.0);
        assert!(matches!(auroc(&s, &[true; 4]), Err(Error::DegenerateLabels)));
    }

    #[test]
    fn auprc_hand_example() {
        // ranks: 0.9 (+), 0.8 (-), 0.7 (+): AP = 1/2 * 1 + 1/2 * 2/3
        let ap = auprc(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        // all tied: one threshold, precision = base rate
        let tied = auprc(&[0.5; 4], &[true, false, false, false]).unwrap();
        assert!((tied - 0.25).abs() < 1e-12);
    }

    #[test]
    fn known_ratio_values() {
        assert!((bounded_degradation(0.229, 0.503).unwrap() - 1.1965).abs() < 1e-4);
        assert!((bounded_degradation(0.111, 0.323).unwrap() - 1.9099).abs() < 1e-4);
        assert_eq!(bounded_degradation(0.3, 0.3).unwrap(), 0.0);
        let (per, _) = rgr(&[0.111, 0.323], &[0.229, 0.503]).unwrap();
        assert!((per[0] - 0.5153).abs() < 1e-4);
        assert!((per[1] - 0.3579).abs() < 1e-4);
        let (same, mean) = rgr(&[0.2, 0.3, 0.4], &[0.2, 0.3, 0.4]).unwrap();
        assert!(same.iter().all(|v| *v == 0.0) && mean == 0.0);
    }

    #[test]
    fn closed_loop_examples() {
        let mut trials = vec![(true, Some(0.3)); 5];
        trials.extend(vec![(false, None); 25]);
        let a = closed_loop_aggregate(&trials).unwrap();
        assert!((a.scr - 0.1667).abs() < 1e-4 && (a.asr - 0.8333).abs() < 1e-4);
        let a = closed_loop_aggregate(&[(true, Some(0.19)); 4]).unwrap();
        assert!((a.latency_mean.unwrap() - 0.19).abs() < 1e-15);
        assert!(a.latency_std.unwrap() < 1e-15);
        let a = closed_loop_aggregate(&[(false, None); 3]).unwrap();
        assert_eq!((a.n_success, a.latency_mean, a.latency_std), (0, None, None));
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 4.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.iter().any(|x| *x) && l.iter().any(|x| !*x))
    }

    proptest! {
        #[test]
        fn auroc_equals_pairwise((s, l) in scored()) {
            prop_assert_eq!(auroc(&s, &l).unwrap(), auroc_pairwise(&s, &l).unwrap());
        }

        #[test]
        fn auroc_complement((s, l) in scored()) {
            let neg: Vec<bool> = l.iter().map(|x| !x).collect();
            prop_assert!((auroc(&s, &l).unwrap() + auroc(&s, &neg).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auroc_monotone_invariant((s, l) in scored()) {
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&t, &l).unwrap());
        }

        #[test]
        fn auprc_in_unit_interval((s, l) in scored()) {
            let ap = auprc(&s, &l).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&ap));
        }

        #[test]
        fn ratios_scale_invariant(w in 0.01f64..2.0, s in 0.01f64..2.0, k in 0.01f64..100.0) {
            let bd = bounded_degradation(w, s).unwrap();
            prop_assert!((bd - bounded_degradation(k * w, k * s).unwrap()).abs() < 1e-9 * (1.0 + bd.abs()));
            let (_, m) = rgr(&[w], &[s]).unwrap();
            let (_, mk) = rgr(&[k * w], &[k * s]).unwrap();
            prop_assert!((m - mk).abs() < 1e-9 * (1.0 + m.abs()));
        }
    }
}
