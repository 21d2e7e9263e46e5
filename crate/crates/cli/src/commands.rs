use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use odca_core::align::AffineAlignment;
use odca_core::attack::Severity;
use odca_core::closedloop::{persistence_sweep, run_batch, sweep_csv, Defense, FrameRecord, Outcome, TrialLog};
use odca_core::data::{load_sequence, load_sequence_dir, save_sequence, SensorSequence, SequenceFormat};
use odca_core::forecast::{BackendSpec, Forecaster};
use odca_core::gatefuse::OnlineRepair;
use odca_core::pipeline::{
    ablation_csv, attacked_copy, fit_alignment, heatmap_csv, radar_csv, recovery_csv, render_markdown, rmse_table_csv,
    run_benchmark, split_by_series, train_head, train_log_csv, train_platform_head, EvalReport, SplitSummary,
    TrainingSummary,
};
use odca_core::repair::DeltaHead;
use odca_core::results::{repair_table, write_table};
use odca_core::synth::generate_suite;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{AlignArgs, AttackArgs, ClosedLoopArgs, DefenseArg, EvalArgs, Format, GenArgs, RepairArgs, ReportArgs,
    SweepArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn backend(cfg: &RunConfig) -> Result<Box<dyn Forecaster>> {
    let spec = BackendSpec::from_env()?;
    spec.build(&cfg.benchmark.forecast).context("starting the forecaster backend")
}

/// Sequences of a directory, with an error that says how to make them.
fn load_dir(dir: &Path) -> Result<Vec<(PathBuf, SensorSequence)>> {
    if !dir.is_dir() {
        bail!("{} is not a directory; generate a dataset with `odca gen --out {}`", dir.display(), dir.display());
    }
    let seqs = load_sequence_dir(dir)?;
    if seqs.is_empty() {
        bail!("no .csv or .jsonl sequences in {}; generate some with `odca gen --out {}`", dir.display(), dir.display());
    }
    Ok(seqs)
}

fn load_inputs(path: &Path) -> Result<Vec<(PathBuf, SensorSequence)>> {
    if path.is_dir() {
        return load_dir(path);
    }
    let Some(fmt) = SequenceFormat::from_path(path) else {
        bail!("{} is neither a directory nor a .csv/.jsonl sequence file", path.display());
    };
    if !path.exists() {
        bail!("{} does not exist; generate sequences with `odca gen` or `odca attack`", path.display());
    }
    Ok(vec![(path.to_path_buf(), load_sequence(path, fmt)?)])
}

fn load_head(path: &Path) -> Result<DeltaHead> {
    if !path.exists() {
        bail!("head file {} not found; train one with `odca train`", path.display());
    }
    Ok(DeltaHead::load(path)?)
}

fn load_alignment(path: &Path) -> Result<AffineAlignment> {
    if !path.exists() {
        bail!("alignment file {} not found; fit one with `odca align` or `odca train`", path.display());
    }
    Ok(AffineAlignment::load(path)?)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Serialize)]
struct Manifest<'a> {
    config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    severity: Option<&'a str>,
    files: Vec<String>,
}

pub fn gen(mut cfg: RunConfig, a: &GenArgs) -> Result<()> {
    if let Some(n) = a.n_sequences {
        cfg.synth.n_sequences = n;
    }
    if let Some(d) = a.duration {
        cfg.synth.duration = d;
    }
    if let Some(f) = a.format {
        cfg.format = match f {
            Format::Csv => SequenceFormat::Csv,
            Format::Jsonl => SequenceFormat::Jsonl,
        };
    }
    let cfg = cfg.resolve()?;
    create_dir(&a.out)?;
    let suite = generate_suite(&cfg.synth)?;
    let mut files = Vec::with_capacity(suite.len());
    for seq in &suite {
        let name = format!("{}.{}", seq.id(), cfg.format.extension());
        save_sequence(seq, &a.out.join(&name), cfg.format)?;
        files.push(name);
    }
    write_json(
        &a.out.join("manifest.json"),
        &Manifest {
            config: cfg.to_json(),
            severity: None,
            files,
        },
    )?;
    eprintln!("wrote {} sequences to {}", suite.len(), a.out.display());
    Ok(())
}

pub fn attack(cfg: RunConfig, a: &AttackArgs) -> Result<()> {
    let cfg = cfg.resolve()?;
    let severity: Severity = a.severity.parse()?;
    if severity == Severity::None {
        bail!("severity must be weak, mid or strong");
    }
    let seqs = load_dir(&a.input)?;
    if a.out == a.input {
        bail!("--out must differ from --input so the clean references survive");
    }
    create_dir(&a.out)?;
    let mut files = Vec::with_capacity(seqs.len());
    for (i, (path, seq)) in seqs.iter().enumerate() {
        let attacked = attacked_copy(&cfg.benchmark, seq, i, severity)
            .with_context(|| format!("attacking {}", path.display()))?;
        let name = file_name(path);
        let fmt = SequenceFormat::from_path(path).expect("loaded files have a known extension");
        save_sequence(&attacked, &a.out.join(&name), fmt)?;
        files.push(name);
    }
    write_json(
        &a.out.join("manifest.json"),
        &Manifest {
            config: cfg.to_json(),
            severity: Some(severity.as_str()),
            files,
        },
    )?;
    eprintln!("wrote {} {} sequences to {}", seqs.len(), severity.as_str(), a.out.display());
    Ok(())
}

fn suite_of(dir: &Path) -> Result<Vec<SensorSequence>> {
    Ok(load_dir(dir)?.into_iter().map(|(_, s)| s).collect())
}

pub fn align(cfg: RunConfig, a: &AlignArgs) -> Result<()> {
    let cfg = cfg.resolve()?;
    let suite = suite_of(&a.data)?;
    let split = split_by_series(suite.len(), &cfg.benchmark.split, cfg.benchmark.split_seed())?;
    let alignment = fit_alignment(&cfg.benchmark, &suite, &split)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    alignment.save(&a.out)?;
    eprintln!(
        "depth = {:.4} * lidar + {:.4} from {} pairs",
        alignment.alpha, alignment.beta, alignment.n_used
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainRecord {
    config: serde_json::Value,
    forecaster: String,
    source: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<SplitSummary>,
    alignment: AffineAlignment,
    training: TrainingSummary,
}

pub fn train(cfg: RunConfig, a: &TrainArgs) -> Result<()> {
    let cfg = cfg.resolve()?;
    let forecaster = backend(&cfg)?;
    create_dir(&a.out)?;
    let (alignment, outcome, split, source) = if a.platform {
        let (al, o) = train_platform_head(
            &cfg.benchmark,
            &cfg.scenario,
            cfg.closedloop.platform_recordings,
            forecaster.as_ref(),
        )?;
        (al, o, None, "platform")
    } else {
        let data = a.data.as_deref().expect("clap requires --data without --platform");
        let suite = suite_of(data)?;
        let split = split_by_series(suite.len(), &cfg.benchmark.split, cfg.benchmark.split_seed())?;
        let alignment = match &a.alignment {
            Some(p) => load_alignment(p)?,
            None => fit_alignment(&cfg.benchmark, &suite, &split)?,
        };
        let o = train_head(
            &cfg.benchmark,
            &suite,
            &split,
            &alignment,
            forecaster.as_ref(),
            &cfg.benchmark.train.weights,
        )?;
        let names = |v: &[usize]| v.iter().map(|&i| suite[i].id().to_string()).collect();
        let summary = SplitSummary {
            train: names(&split.train),
            val: names(&split.val),
            test: names(&split.test),
        };
        (alignment, o, Some(summary), "dataset")
    };
    outcome.head.save(&a.out.join("head.json"))?;
    alignment.save(&a.out.join("alignment.json"))?;
    write_text(&a.out.join("train_log.csv"), &train_log_csv(&outcome.log))?;
    write_json(
        &a.out.join("train.json"),
        &TrainRecord {
            config: cfg.to_json(),
            forecaster: forecaster.name().to_string(),
            source,
            split,
            alignment,
            training: TrainingSummary::from_outcome(&outcome),
        },
    )?;
    eprintln!(
        "trained {} parameters, best epoch {} of {}; wrote {}",
        outcome.head.parameter_count(),
        outcome.best_epoch,
        outcome.log.len() - 1,
        a.out.join("head.json").display()
    );
    Ok(())
}

pub fn repair(cfg: RunConfig, a: &RepairArgs) -> Result<()> {
    let cfg = cfg.resolve()?;
    let head = load_head(&a.head)?;
    let alignment = load_alignment(&a.alignment)?;
    let inputs = load_inputs(&a.input)?;
    let forecaster = backend(&cfg)?;
    let online = OnlineRepair {
        head: &head,
        alignment,
        gate: cfg.benchmark.gate,
        forecast: cfg.benchmark.forecast,
        forecaster: forecaster.as_ref(),
    };
    create_dir(&a.out)?;
    let mut latencies = Vec::new();
    for (path, seq) in &inputs {
        let clean = match &a.clean {
            None => None,
            Some(c) => {
                let p = if c.is_dir() { c.join(file_name(path)) } else { c.clone() };
                let fmt = SequenceFormat::from_path(&p)
                    .with_context(|| format!("{} is not a .csv/.jsonl sequence", p.display()))?;
                if !p.exists() {
                    bail!("clean reference {} not found; it comes from `odca gen`", p.display());
                }
                Some(load_sequence(&p, fmt)?)
            }
        };
        let run = online.run_sequence(seq, cfg.benchmark.forecast_seed())?;
        latencies.extend_from_slice(&run.latency_us);
        let rows = repair_table(seq, clean.as_ref(), &run, a.record_latency);
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_table(&rows, &a.out.join(format!("{stem}.results.csv")))?;
    }
    if a.record_latency && !latencies.is_empty() {
        let mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
        eprintln!("mean step latency {mean:.1} us over {} steps", latencies.len());
    }
    eprintln!("wrote {} results tables to {}", inputs.len(), a.out.display());
    Ok(())
}

fn write_report_files(report: &EvalReport, out: &Path) -> Result<()> {
    write_text(&out.join("report.md"), &render_markdown(report))?;
    write_text(&out.join("rmse_table.csv"), &rmse_table_csv(report))?;
    write_text(&out.join("recovery.csv"), &recovery_csv(report))?;
    write_text(&out.join("heatmap.csv"), &heatmap_csv(report))?;
    write_text(&out.join("radar.csv"), &radar_csv(report))?;
    if let Some(rows) = &report.ablation {
        write_text(&out.join("ablation.csv"), &ablation_csv(rows))?;
    }
    Ok(())
}

pub fn eval(mut cfg: RunConfig, a: &EvalArgs) -> Result<()> {
    if a.ablation {
        cfg.benchmark.ablation = true;
    }
    let cfg = cfg.resolve()?;
    let head = a.head.as_deref().map(load_head).transpose()?;
    let alignment = a.alignment.as_deref().map(load_alignment).transpose()?;
    let suite = suite_of(&a.data)?;
    let forecaster = backend(&cfg)?;
    let run = run_benchmark(&cfg.benchmark, &suite, forecaster.as_ref(), head, alignment)?;
    let mut report = run.report;
    report.config = cfg.to_json();

    create_dir(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    write_report_files(&report, &a.out)?;
    report.alignment.save(&a.out.join("alignment.json"))?;
    if let Some(o) = &run.train_log {
        o.head.save(&a.out.join("head.json"))?;
        write_text(&a.out.join("train_log.csv"), &train_log_csv(&o.log))?;
    }
    let tables = a.out.join("tables");
    create_dir(&tables)?;
    for t in &run.tables {
        write_table(&t.rows, &tables.join(t.file_name()))?;
    }
    eprintln!("wrote report and {} results tables to {}", run.tables.len(), a.out.display());
    Ok(())
}

/// One line of the trial log: every frame, then a trailer per trial.
#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum TrialLine<'a> {
    Frame {
        trial: u64,
        #[serde(flatten)]
        frame: &'a FrameRecord,
    },
    Trailer {
        trial: u64,
        outcome: Outcome,
        d_brake_final: f64,
        latency: Option<f64>,
        lost_detection_frames: usize,
        episodes: usize,
    },
}

fn write_trials(path: &Path, logs: &[TrialLog]) -> Result<()> {
    let mut out = Vec::new();
    for log in logs {
        for frame in &log.frames {
            serde_json::to_writer(&mut out, &TrialLine::Frame { trial: log.seed, frame })?;
            out.push(b'\n');
        }
        let trailer = TrialLine::Trailer {
            trial: log.seed,
            outcome: log.outcome,
            d_brake_final: log.d_brake_final,
            latency: log.latency,
            lost_detection_frames: log.lost_detection_frames,
            episodes: log.episodes,
        };
        serde_json::to_writer(&mut out, &trailer)?;
        writeln!(out)?;
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Head and alignment for the closed loop. The scenario's LiDAR reports the
/// same distance as the detector, so identity is the natural fallback.
fn closed_loop_model(head: Option<&Path>, alignment: Option<&Path>) -> Result<Option<(DeltaHead, AffineAlignment)>> {
    let Some(h) = head else {
        return Ok(None);
    };
    let alignment = match alignment {
        Some(p) => load_alignment(p)?,
        None => AffineAlignment::IDENTITY,
    };
    Ok(Some((load_head(h)?, alignment)))
}

#[derive(Serialize)]
struct ClosedLoopRecord<'a> {
    config: serde_json::Value,
    defense: Defense,
    forecaster: Option<String>,
    aggregate: &'a odca_core::metrics::ClosedLoopAggregate,
}

pub fn closedloop(mut cfg: RunConfig, a: &ClosedLoopArgs) -> Result<()> {
    if let Some(n) = a.trials {
        cfg.closedloop.n_trials = n;
    }
    if let Some(t) = a.t_atk {
        cfg.scenario.t_atk = t;
    }
    if let Some(r) = a.rho {
        cfg.scenario.rho = r;
    }
    let cfg = cfg.resolve()?;
    let defense = match a.defense {
        DefenseArg::None => Defense::None,
        DefenseArg::Odca => Defense::Odca,
    };
    let model = closed_loop_model(a.head.as_deref(), a.alignment.as_deref())?;
    if defense == Defense::Odca && model.is_none() {
        bail!("the odca defense needs --head; train one with `odca train --platform --out <dir>`");
    }
    let forecaster = match defense {
        Defense::Odca => Some(backend(&cfg)?),
        Defense::None => None,
    };
    let online = match (&model, &forecaster) {
        (Some((head, alignment)), Some(f)) => Some(OnlineRepair {
            head,
            alignment: *alignment,
            gate: cfg.benchmark.gate,
            forecast: cfg.benchmark.forecast,
            forecaster: f.as_ref(),
        }),
        _ => None,
    };
    let seed0 = cfg.scenario.seed;
    let (logs, agg) = run_batch(&cfg.scenario, cfg.closedloop.n_trials, defense, online.as_ref(), seed0)?;

    create_dir(&a.out)?;
    write_trials(&a.out.join("trials.jsonl"), &logs)?;
    write_json(
        &a.out.join("aggregate.json"),
        &ClosedLoopRecord {
            config: cfg.to_json(),
            defense,
            forecaster: forecaster.as_ref().map(|f| f.name().to_string()),
            aggregate: &agg,
        },
    )?;
    eprintln!(
        "{} trials: SCR {:.3}, ASR {:.3}; wrote {}",
        agg.n_trials,
        agg.scr,
        agg.asr,
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepRecord {
    config: serde_json::Value,
    forecaster: Option<String>,
    runs: Vec<(Defense, Vec<odca_core::closedloop::SweepRow>)>,
}

pub fn sweep(mut cfg: RunConfig, a: &SweepArgs) -> Result<()> {
    if let Some(n) = a.trials {
        cfg.closedloop.n_trials = n;
    }
    if let Some(d) = &a.durations {
        cfg.closedloop.durations = d.clone();
    }
    if let Some(r) = a.rho {
        cfg.scenario.rho = r;
    }
    let cfg = cfg.resolve()?;
    let model = closed_loop_model(a.head.as_deref(), a.alignment.as_deref())?;
    let forecaster = model.as_ref().map(|_| backend(&cfg)).transpose()?;
    let seed0 = cfg.scenario.seed;
    let cl = &cfg.closedloop;
    let mut runs = vec![(
        Defense::None,
        persistence_sweep(&cfg.scenario, &cl.durations, Defense::None, None, cl.n_trials, seed0)?,
    )];
    if let (Some((head, alignment)), Some(f)) = (&model, &forecaster) {
        let online = OnlineRepair {
            head,
            alignment: *alignment,
            gate: cfg.benchmark.gate,
            forecast: cfg.benchmark.forecast,
            forecaster: f.as_ref(),
        };
        runs.push((
            Defense::Odca,
            persistence_sweep(&cfg.scenario, &cl.durations, Defense::Odca, Some(&online), cl.n_trials, seed0)?,
        ));
    }
    create_dir(&a.out)?;
    write_text(&a.out.join("sweep.csv"), &sweep_csv(&runs))?;
    write_json(
        &a.out.join("sweep.json"),
        &SweepRecord {
            config: cfg.to_json(),
            forecaster: forecaster.as_ref().map(|f| f.name().to_string()),
            runs,
        },
    )?;
    eprintln!("wrote {}", a.out.join("sweep.csv").display());
    Ok(())
}

pub fn report(cfg: RunConfig, a: &ReportArgs) -> Result<()> {
    cfg.resolve()?;
    if !a.input.exists() {
        bail!("{} not found; produce it with `odca eval`", a.input.display());
    }
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let report: EvalReport =
        serde_json::from_str(&text).with_context(|| format!("{} is not a report from `odca eval`", a.input.display()))?;
    create_dir(&a.out)?;
    write_report_files(&report, &a.out)?;
    eprintln!("wrote summaries to {}", a.out.display());
    Ok(())
}
