//! End-to-end benchmark: by-series split, alignment, training, evaluation of
//! every method at every severity, optional loss ablation, and report tables.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{fit_from_sequences, AffineAlignment, AlignConfig};
use crate::attack::{apply_attack, AttackSpec, Severity};
use crate::closedloop::{platform_recordings, ScenarioConfig};
use crate::baselines::{ekf_fuse, forecast_replace, lidar_only, passthrough, EkfConfig};
use crate::data::SensorSequence;
use crate::error::{Error, Result};
use crate::forecast::{step_seed, ForecastConfig, Forecaster};
use crate::gatefuse::{GateConfig, OnlineRepair};
use crate::metrics::{auprc, auroc, bounded_degradation, inverted_bd, locf, mae, rgr, rmse, score_streams};
use crate::repair::{build_samples, train, DeltaHead, EpochLog, LossWeights, TrainConfig, TrainOutcome, TrainingPair};
use crate::results::{baseline_table, repair_table, ResultRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns whole sequences to train/validation/test. Test and validation
/// sizes are rounded; with two or more sequences test and train each get at
/// least one.
pub fn split_by_series(n: usize, fractions: &SplitFractions, seed: u64) -> Result<Split> {
    if n < 2 {
        return Err(Error::config("a by-series split needs at least two sequences"));
    }
    let total = fractions.train + fractions.val + fractions.test;
    if !(fractions.train > 0.0 && fractions.val >= 0.0 && fractions.test > 0.0 && total > 0.0) {
        return Err(Error::config(format!("invalid split fractions {fractions:?}")));
    }
    let n_test = ((n as f64 * fractions.test / total).round() as usize).clamp(1, n - 1);
    let n_val = ((n as f64 * fractions.val / total).round() as usize).min(n - 1 - n_test);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx[..n_test].to_vec();
    let mut val = idx[n_test..n_test + n_val].to_vec();
    let mut train = idx[n_test + n_val..].to_vec();
    test.sort_unstable();
    val.sort_unstable();
    train.sort_unstable();
    Ok(Split { train, val, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Passthrough,
    LidarOnly,
    Ekf,
    ForecastReplace,
    Odca,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Passthrough,
        Method::LidarOnly,
        Method::Ekf,
        Method::ForecastReplace,
        Method::Odca,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Passthrough => "passthrough",
            Method::LidarOnly => "lidar_only",
            Method::Ekf => "ekf",
            Method::ForecastReplace => "forecast_replace",
            Method::Odca => "odca",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

fn severity_name(s: Severity) -> &'static str {
    match s {
        Severity::None => "clean",
        other => other.as_str(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// Seeds the split, the attacks and the forecaster draws.
    pub seed: u64,
    pub split: SplitFractions,
    pub forecast: ForecastConfig,
    pub gate: GateConfig,
    pub train: TrainConfig,
    pub ekf: EkfConfig,
    pub align: AlignConfig,
    /// Seconds at the start of each recording that attacks leave alone.
    pub attack_lead_in: f64,
    /// Retrain with the loss-term subsets and report them.
    pub ablation: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split: SplitFractions::default(),
            forecast: ForecastConfig::default(),
            gate: GateConfig::default(),
            train: TrainConfig::default(),
            ekf: EkfConfig::default(),
            align: AlignConfig::default(),
            attack_lead_in: 0.5,
            ablation: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        self.gate.validate()?;
        self.train.validate()?;
        if !(self.attack_lead_in >= 0.0) {
            return Err(Error::config("attack_lead_in must be non-negative"));
        }
        self.ekf.validate()
    }

    pub fn split_seed(&self) -> u64 {
        step_seed(self.seed, 0x51)
    }

    pub fn forecast_seed(&self) -> u64 {
        step_seed(self.seed, 0xf0)
    }

    /// Attack seed for one sequence at one severity.
    pub fn attack_seed(&self, sequence: usize, severity: Severity) -> u64 {
        step_seed(step_seed(self.seed, 0xa0 + severity as u64), sequence as u64)
    }
}

/// Attacked copy of a clean sequence; the clean sequence itself at
/// [`Severity::None`].
pub fn attacked_copy(cfg: &BenchmarkConfig, clean: &SensorSequence, index: usize, severity: Severity) -> Result<SensorSequence> {
    if severity == Severity::None {
        return Ok(clean.clone());
    }
    let spec = AttackSpec {
        lead_in: cfg.attack_lead_in,
        ..AttackSpec::preset(severity, cfg.attack_seed(index, severity))
    };
    apply_attack(clean, &spec)
}

/// Clean and weak/mid/strong pairs for each listed sequence.
pub fn training_pairs(cfg: &BenchmarkConfig, suite: &[SensorSequence], indices: &[usize]) -> Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    for &i in indices {
        for sev in [Severity::None, Severity::Weak, Severity::Mid, Severity::Strong] {
            pairs.push(TrainingPair {
                clean: suite[i].clone(),
                attacked: attacked_copy(cfg, &suite[i], i, sev)?,
            });
        }
    }
    Ok(pairs)
}

pub fn fit_alignment(cfg: &BenchmarkConfig, suite: &[SensorSequence], split: &Split) -> Result<AffineAlignment> {
    let refs: Vec<&SensorSequence> = split.train.iter().map(|&i| &suite[i]).collect();
    fit_from_sequences(&refs, &cfg.align)
}

pub fn train_head(
    cfg: &BenchmarkConfig,
    suite: &[SensorSequence],
    split: &Split,
    alignment: &AffineAlignment,
    forecaster: &dyn Forecaster,
    weights: &LossWeights,
) -> Result<TrainOutcome> {
    let build = |idx: &[usize]| -> Result<_> {
        let pairs = training_pairs(cfg, suite, idx)?;
        build_samples(&pairs, alignment, &cfg.gate, &cfg.forecast, forecaster, cfg.forecast_seed())
    };
    let train_set = build(&split.train)?;
    let val_set = build(&split.val)?;
    train(&train_set, &val_set, &TrainConfig { weights: *weights, ..cfg.train })
}

/// Lead-in used when corrupting platform recordings: long enough for the
/// forecaster's drift window to fill before the first segment.
pub const PLATFORM_LEAD_IN: f64 = 2.0;

/// Head and alignment fitted to unattacked recordings of the closed-loop
/// scenario, corrupted with the usual presets after [`PLATFORM_LEAD_IN`].
pub fn train_platform_head(
    cfg: &BenchmarkConfig,
    scenario: &ScenarioConfig,
    n_recordings: usize,
    forecaster: &dyn Forecaster,
) -> Result<(AffineAlignment, TrainOutcome)> {
    let cfg = BenchmarkConfig {
        attack_lead_in: cfg.attack_lead_in.max(PLATFORM_LEAD_IN),
        ..cfg.clone()
    };
    let recordings = platform_recordings(scenario, n_recordings, step_seed(cfg.seed, 0x9c))?;
    let split = split_by_series(recordings.len(), &cfg.split, cfg.split_seed())?;
    let alignment = fit_alignment(&cfg, &recordings, &split)?;
    let outcome = train_head(&cfg, &recordings, &split, &alignment, forecaster, &cfg.train.weights)?;
    Ok((alignment, outcome))
}

/// Results table of one method on one input.
pub fn run_method(
    method: Method,
    clean: &SensorSequence,
    input: &SensorSequence,
    online: &OnlineRepair<'_>,
    ekf: &EkfConfig,
    seed: u64,
) -> Result<Vec<ResultRow>> {
    let estimate = match method {
        Method::Odca => {
            let run = online.run_sequence(input, seed)?;
            return Ok(repair_table(input, Some(clean), &run, false));
        }
        Method::Passthrough => passthrough(input),
        Method::LidarOnly => lidar_only(input, &online.alignment),
        Method::Ekf => ekf_fuse(input, &online.alignment, ekf)?,
        Method::ForecastReplace => forecast_replace(input, online.forecaster, &online.forecast, seed)?,
    };
    Ok(baseline_table(input, Some(clean), &estimate))
}

/// One results table of the evaluation grid.
#[derive(Debug, Clone)]
pub struct CaseTable {
    pub sequence: String,
    pub severity: Severity,
    pub method: Method,
    pub rows: Vec<ResultRow>,
}

impl CaseTable {
    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.csv", self.sequence, severity_name(self.severity), self.method.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub method: Method,
    pub severity: String,
    pub rmse: f64,
    pub mae: f64,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub severity: String,
    pub auroc_xs: f64,
    pub auprc_xs: f64,
    pub auroc_chg: f64,
    pub auprc_chg: f64,
    pub n_frames: usize,
    pub n_attacked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BdRow {
    pub method: Method,
    pub bd: f64,
    /// `1 / (1 + bd)`, the higher-is-better form used on radar axes.
    pub bd_inverted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgrRow {
    pub severity: String,
    pub rgr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub bd: Vec<BdRow>,
    /// Repair path against forecast replacement.
    pub rgr: Vec<RgrRow>,
    pub rgr_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub objective: String,
    pub rmse_rep: f64,
    /// Change against the identity-only objective.
    pub delta_rmse: f64,
    pub rmse_fused: f64,
    pub auroc_chg: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub parameter_count: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub initial_train_loss: f64,
    pub best_train_loss: f64,
    pub best_val_loss: Option<f64>,
}

impl TrainingSummary {
    pub fn from_outcome(o: &TrainOutcome) -> Self {
        let best = &o.log[o.best_epoch];
        Self {
            parameter_count: o.head.parameter_count(),
            epochs_run: o.log.len() - 1,
            best_epoch: o.best_epoch,
            initial_train_loss: o.log[0].train.total,
            best_train_loss: best.train.total,
            best_val_loss: best.val.map(|v| v.total),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fully resolved configuration of the run.
    pub config: serde_json::Value,
    pub forecaster: String,
    pub split: SplitSummary,
    pub alignment: AffineAlignment,
    pub training: Option<TrainingSummary>,
    pub recovery: Vec<RecoveryRow>,
    pub diagnostics: Vec<DiagnosticRow>,
    pub summary: Summary,
    pub ablation: Option<Vec<AblationRow>>,
}

impl EvalReport {
    pub fn rmse(&self, method: Method, severity: Severity) -> Option<f64> {
        self.recovery
            .iter()
            .find(|r| r.method == method && r.severity == severity_name(severity))
            .map(|r| r.rmse)
    }

    pub fn diagnostic(&self, severity: Severity) -> Option<&DiagnosticRow> {
        self.diagnostics.iter().find(|d| d.severity == severity_name(severity))
    }
}

/// Estimates with gaps carried forward, concatenated over tables, paired with
/// the clean reference.
fn pooled(tables: &[&CaseTable], column: fn(&ResultRow) -> Option<f64>) -> (Vec<Option<f64>>, Vec<Option<f64>>) {
    let mut pred = Vec::new();
    let mut reference = Vec::new();
    for t in tables {
        let est: Vec<Option<f64>> = t.rows.iter().map(column).collect();
        pred.extend(locf(&est));
        reference.extend(t.rows.iter().map(|r| r.d_clean));
    }
    (pred, reference)
}

fn diagnostics_of(tables: &[&CaseTable], severity: Severity) -> Result<DiagnosticRow> {
    let mut xs = Vec::new();
    let mut chg = Vec::new();
    let mut labels = Vec::new();
    for t in tables {
        let (x, c, l) = score_streams(&t.rows)?;
        xs.extend(x);
        chg.extend(c);
        labels.extend(l);
    }
    Ok(DiagnosticRow {
        severity: severity_name(severity).to_string(),
        auroc_xs: auroc(&xs, &labels)?,
        auprc_xs: auprc(&xs, &labels)?,
        auroc_chg: auroc(&chg, &labels)?,
        auprc_chg: auprc(&chg, &labels)?,
        n_frames: labels.len(),
        n_attacked: labels.iter().filter(|l| **l).count(),
    })
}

/// Runs every method on every test sequence at clean and attacked
/// severities.
pub fn evaluate_grid(
    cfg: &BenchmarkConfig,
    suite: &[SensorSequence],
    test: &[usize],
    online: &OnlineRepair<'_>,
    methods: &[Method],
) -> Result<Vec<CaseTable>> {
    let severities = [Severity::None, Severity::Weak, Severity::Mid, Severity::Strong];
    let mut cases = Vec::new();
    for &sev in &severities {
        for &i in test {
            for &m in methods {
                cases.push((i, sev, m));
            }
        }
    }
    cases
        .par_iter()
        .map(|&(i, sev, m)| {
            let input = attacked_copy(cfg, &suite[i], i, sev)?;
            Ok(CaseTable {
                sequence: suite[i].id().to_string(),
                severity: sev,
                method: m,
                rows: run_method(m, &suite[i], &input, online, &cfg.ekf, cfg.forecast_seed())?,
            })
        })
        .collect()
}

fn select<'a>(tables: &'a [CaseTable], m: Method, s: Severity) -> Vec<&'a CaseTable> {
    tables.iter().filter(|t| t.method == m && t.severity == s).collect()
}

pub fn recovery_rows(tables: &[CaseTable], methods: &[Method]) -> Result<Vec<RecoveryRow>> {
    let mut out = Vec::new();
    for &m in methods {
        for s in [Severity::None, Severity::Weak, Severity::Mid, Severity::Strong] {
            let sel = select(tables, m, s);
            if sel.is_empty() {
                continue;
            }
            let (p, r) = pooled(&sel, |r| r.d_fused);
            out.push(RecoveryRow {
                method: m,
                severity: severity_name(s).to_string(),
                rmse: rmse(&p, &r)?,
                mae: mae(&p, &r)?,
                n_frames: p.iter().zip(&r).filter(|(a, b)| a.is_some() && b.is_some()).count(),
            });
        }
    }
    Ok(out)
}

fn summary_of(recovery: &[RecoveryRow], methods: &[Method]) -> Result<Summary> {
    let get = |m: Method, s: Severity| {
        recovery
            .iter()
            .find(|r| r.method == m && r.severity == severity_name(s))
            .map(|r| r.rmse)
            .ok_or_else(|| Error::config(format!("missing {} at {}", m.as_str(), severity_name(s))))
    };
    let mut bd = Vec::new();
    for &m in methods {
        let b = bounded_degradation(get(m, Severity::Weak)?, get(m, Severity::Strong)?)?;
        bd.push(BdRow {
            method: m,
            bd: b,
            bd_inverted: inverted_bd(b),
        });
    }
    let (rgr_rows, rgr_mean) = if methods.contains(&Method::Odca) && methods.contains(&Method::ForecastReplace) {
        let ours: Vec<f64> = Severity::ATTACKED.iter().map(|&s| get(Method::Odca, s)).collect::<Result<_>>()?;
        let refs: Vec<f64> = Severity::ATTACKED
            .iter()
            .map(|&s| get(Method::ForecastReplace, s))
            .collect::<Result<_>>()?;
        let (per, mean) = rgr(&ours, &refs)?;
        let rows = Severity::ATTACKED
            .iter()
            .zip(per)
            .map(|(s, g)| RgrRow {
                severity: severity_name(*s).to_string(),
                rgr: g,
            })
            .collect();
        (rows, mean)
    } else {
        (Vec::new(), f64::NAN)
    };
    Ok(Summary {
        bd,
        rgr: rgr_rows,
        rgr_mean,
    })
}

/// Objectives of the ablation, in reporting order.
pub fn ablation_objectives(base: &LossWeights) -> Vec<(&'static str, LossWeights)> {
    vec![
        ("L_ID", base.subset(true, false, false, false)),
        ("L_ID + L_D0", base.subset(true, true, false, false)),
        ("L_ID + L_D0 + L_cons", base.subset(true, true, true, false)),
        ("L_ID + L_D0 + L_kin", base.subset(true, true, false, true)),
        ("Full", *base),
    ]
}

/// Retrains with each objective on the same data and scores the strong test
/// split: RMSE of the pre-gate repaired signal, of the fused output, and
/// correction-magnitude AUROC.
pub fn run_ablation(
    cfg: &BenchmarkConfig,
    suite: &[SensorSequence],
    split: &Split,
    alignment: &AffineAlignment,
    forecaster: &dyn Forecaster,
) -> Result<Vec<AblationRow>> {
    let mut rows: Vec<AblationRow> = Vec::new();
    for (name, weights) in ablation_objectives(&cfg.train.weights) {
        let outcome = train_head(cfg, suite, split, alignment, forecaster, &weights)?;
        let online = OnlineRepair {
            head: &outcome.head,
            alignment: *alignment,
            gate: cfg.gate,
            forecast: cfg.forecast,
            forecaster,
        };
        let tables = evaluate_strong(cfg, suite, &split.test, &online)?;
        let sel: Vec<&CaseTable> = tables.iter().collect();
        let (rep, reference) = pooled(&sel, |r| r.d_rep);
        let (fused, _) = pooled(&sel, |r| r.d_fused);
        let rmse_rep = rmse(&rep, &reference)?;
        let base = rows.first().map_or(rmse_rep, |r| r.rmse_rep);
        rows.push(AblationRow {
            objective: name.to_string(),
            rmse_rep,
            delta_rmse: rmse_rep - base,
            rmse_fused: rmse(&fused, &reference)?,
            auroc_chg: diagnostics_of(&sel, Severity::Strong)?.auroc_chg,
            best_epoch: outcome.best_epoch,
        });
    }
    Ok(rows)
}

fn evaluate_strong(
    cfg: &BenchmarkConfig,
    suite: &[SensorSequence],
    test: &[usize],
    online: &OnlineRepair<'_>,
) -> Result<Vec<CaseTable>> {
    test.par_iter()
        .map(|&i| {
            let input = attacked_copy(cfg, &suite[i], i, Severity::Strong)?;
            Ok(CaseTable {
                sequence: suite[i].id().to_string(),
                severity: Severity::Strong,
                method: Method::Odca,
                rows: run_method(Method::Odca, &suite[i], &input, online, &cfg.ekf, cfg.forecast_seed())?,
            })
        })
        .collect()
}

/// Everything a benchmark run produces.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub report: EvalReport,
    pub head: DeltaHead,
    pub train_log: Option<TrainOutcome>,
    pub tables: Vec<CaseTable>,
}

/// Full benchmark on a clean suite. A supplied head skips training; a
/// supplied alignment skips calibration.
pub fn run_benchmark(
    cfg: &BenchmarkConfig,
    suite: &[SensorSequence],
    forecaster: &dyn Forecaster,
    head: Option<DeltaHead>,
    alignment: Option<AffineAlignment>,
) -> Result<BenchmarkRun> {
    cfg.validate()?;
    let split = split_by_series(suite.len(), &cfg.split, cfg.split_seed())?;
    let alignment = match alignment {
        Some(a) => a,
        None => fit_alignment(cfg, suite, &split)?,
    };
    let (head, outcome) = match head {
        Some(h) => (h, None),
        None => {
            let o = train_head(cfg, suite, &split, &alignment, forecaster, &cfg.train.weights)?;
            (o.head.clone(), Some(o))
        }
    };
    let online = OnlineRepair {
        head: &head,
        alignment,
        gate: cfg.gate,
        forecast: cfg.forecast,
        forecaster,
    };
    let tables = evaluate_grid(cfg, suite, &split.test, &online, &Method::ALL)?;
    let recovery = recovery_rows(&tables, &Method::ALL)?;
    let diagnostics = Severity::ATTACKED
        .iter()
        .map(|&s| diagnostics_of(&select(&tables, Method::Odca, s), s))
        .collect::<Result<Vec<_>>>()?;
    let summary = summary_of(&recovery, &Method::ALL)?;
    let ablation = if cfg.ablation {
        Some(run_ablation(cfg, suite, &split, &alignment, forecaster)?)
    } else {
        None
    };
    let names = |v: &[usize]| v.iter().map(|&i| suite[i].id().to_string()).collect();
    let report = EvalReport {
        config: serde_json::to_value(cfg)?,
        forecaster: forecaster.name().to_string(),
        split: SplitSummary {
            train: names(&split.train),
            val: names(&split.val),
            test: names(&split.test),
        },
        alignment,
        training: outcome.as_ref().map(TrainingSummary::from_outcome),
        recovery,
        diagnostics,
        summary,
        ablation,
    };
    Ok(BenchmarkRun {
        report,
        head,
        train_log: outcome,
        tables,
    })
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

/// RMSE table with one row per method and one column per severity.
pub fn rmse_table_csv(report: &EvalReport) -> String {
    let sev = ["clean", "weak", "mid", "strong"];
    let mut s = String::from("method,clean,weak,mid,strong,bd\n");
    for m in Method::ALL {
        let cells: Vec<String> = sev
            .iter()
            .map(|v| {
                report
                    .recovery
                    .iter()
                    .find(|r| r.method == m && r.severity == *v)
                    .map_or(String::new(), |r| r.rmse.to_string())
            })
            .collect();
        let bd = report
            .summary
            .bd
            .iter()
            .find(|b| b.method == m)
            .map_or(String::new(), |b| b.bd.to_string());
        let _ = writeln!(s, "{},{},{}", m.as_str(), cells.join(","), bd);
    }
    s
}

/// Long-form recovery metrics (method, severity, rmse, mae).
pub fn recovery_csv(report: &EvalReport) -> String {
    let mut s = String::from("method,severity,rmse,mae,n_frames\n");
    for r in &report.recovery {
        let _ = writeln!(s, "{},{},{},{},{}", r.method.as_str(), r.severity, r.rmse, r.mae, r.n_frames);
    }
    s
}

/// Detection scores per severity and score stream.
pub fn heatmap_csv(report: &EvalReport) -> String {
    let mut s = String::from("severity,score,auroc,auprc\n");
    for d in &report.diagnostics {
        let _ = writeln!(s, "{},xs,{},{}", d.severity, d.auroc_xs, d.auprc_xs);
        let _ = writeln!(s, "{},chg,{},{}", d.severity, d.auroc_chg, d.auprc_chg);
    }
    s
}

/// Radar axes per method: RMSE by severity, raw and inverted BD, and RGR for
/// the repair path.
pub fn radar_csv(report: &EvalReport) -> String {
    let mut s = String::from("method,rmse_weak,rmse_mid,rmse_strong,bd,bd_inverted,rgr_mean\n");
    for b in &report.summary.bd {
        let r = |sev: Severity| report.rmse(b.method, sev).map_or(String::new(), |v| v.to_string());
        let g = if b.method == Method::Odca {
            report.summary.rgr_mean.to_string()
        } else {
            String::new()
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            b.method.as_str(),
            r(Severity::Weak),
            r(Severity::Mid),
            r(Severity::Strong),
            b.bd,
            b.bd_inverted,
            g
        );
    }
    s
}

/// Per-epoch losses; validation columns stay empty without a validation set.
pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(
        "epoch,train_total,train_id,train_delta0,train_cons,train_kin,val_total,val_id,val_delta0,val_cons,val_kin\n",
    );
    for e in log {
        let t = e.train;
        let v = e.val.map_or_else(
            || ",,,,".to_string(),
            |v| format!("{},{},{},{},{}", v.total, v.id, v.delta0, v.cons, v.kin),
        );
        let _ = writeln!(s, "{},{},{},{},{},{},{}", e.epoch, t.total, t.id, t.delta0, t.cons, t.kin, v);
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("objective,rmse_rep,delta_rmse,rmse_fused,auroc_chg,best_epoch\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.objective, r.rmse_rep, r.delta_rmse, r.rmse_fused, r.auroc_chg, r.best_epoch
        );
    }
    s
}

pub fn render_markdown(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Depth repair benchmark\n");
    let _ = writeln!(s, "Forecaster: `{}`. Test sequences: {}.\n", report.forecaster, report.split.test.join(", "));
    let _ = writeln!(
        s,
        "Alignment: depth = {:.4} * lidar + {:.4} ({} calibration pairs).\n",
        report.alignment.alpha, report.alignment.beta, report.alignment.n_used
    );
    let _ = writeln!(s, "## Recovery RMSE (m)\n");
    let _ = writeln!(s, "| Method | Clean | Weak | Mid | Strong | BD |");
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for m in Method::ALL {
        let cell = |sev| report.rmse(m, sev).map_or("-".to_string(), fmt3);
        let bd = report
            .summary
            .bd
            .iter()
            .find(|b| b.method == m)
            .map_or("-".to_string(), |b| fmt3(b.bd));
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            m.as_str(),
            cell(Severity::None),
            cell(Severity::Weak),
            cell(Severity::Mid),
            cell(Severity::Strong),
            bd
        );
    }
    if !report.summary.rgr.is_empty() {
        let per: Vec<String> = report
            .summary
            .rgr
            .iter()
            .map(|r| format!("{} {}", r.severity, fmt3(r.rgr)))
            .collect();
        let _ = writeln!(
            s,
            "\nResilience gain over forecast replacement: {} (mean {}).",
            per.join(", "),
            fmt3(report.summary.rgr_mean)
        );
    }
    let _ = writeln!(s, "\n## Attack detection\n");
    let _ = writeln!(s, "| Severity | AUROC xs | AUPRC xs | AUROC chg | AUPRC chg |");
    let _ = writeln!(s, "|---|---|---|---|---|");
    for d in &report.diagnostics {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            d.severity,
            fmt3(d.auroc_xs),
            fmt3(d.auprc_xs),
            fmt3(d.auroc_chg),
            fmt3(d.auprc_chg)
        );
    }
    if let Some(rows) = &report.ablation {
        let _ = writeln!(s, "\n## Loss ablation (strong)\n");
        let _ = writeln!(s, "| Objective | RMSE rep | dRMSE | RMSE fused | AUROC chg |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        for r in rows {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                r.objective,
                fmt3(r.rmse_rep),
                fmt3(r.delta_rmse),
                fmt3(r.rmse_fused),
                fmt3(r.auroc_chg)
            );
        }
    }
    if let Some(t) = &report.training {
        let _ = writeln!(
            s,
            "\nDelta head: {} parameters, best epoch {} of {}.",
            t.parameter_count, t.best_epoch, t.epochs_run
        );
    }
    let _ = writeln!(s, "\n## Configuration\n");
    let _ = writeln!(
        s,
        "```json\n{}\n```",
        serde_json::to_string_pretty(&report.config).unwrap_or_default()
    );
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let s = split_by_series(13, &SplitFractions::default(), 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (9, 1, 3));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..13).collect::<Vec<_>>());
        let two = split_by_series(2, &SplitFractions::default(), 0).unwrap();
        assert_eq!((two.train.len(), two.val.len(), two.test.len()), (1, 0, 1));
        assert!(split_by_series(1, &SplitFractions::default(), 0).is_err());
    }

    #[test]
    fn split_deterministic() {
        let f = SplitFractions::default();
        assert_eq!(split_by_series(13, &f, 7).unwrap(), split_by_series(13, &f, 7).unwrap());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }
}
