use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::RunConfig;

/// Gated depth repair: data generation, attacks, training, evaluation and
/// closed-loop stop-sign trials.
#[derive(Parser, Debug)]
#[command(name = "odca", version, about, long_about = None)]
struct Cli {
    /// TOML run configuration; flags given here win over it
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random stream of the run
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate clean synthetic approach-and-stop sequences
    Gen(GenArgs),
    /// Corrupt the depth channel of every sequence in a directory
    Attack(AttackArgs),
    /// Fit the LiDAR-to-depth alignment on the training split
    Align(AlignArgs),
    /// Train the delta head
    Train(TrainArgs),
    /// Run the online repair over sequences and write results tables
    Repair(RepairArgs),
    /// Full benchmark: all methods and severities on the test split
    Eval(EvalArgs),
    /// Closed-loop stop-sign trials under detection suppression
    Closedloop(ClosedLoopArgs),
    /// Attack-persistence sweep over attack durations
    Sweep(SweepArgs),
    /// Re-render Markdown and CSV summaries from a saved report
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_sequences: Option<usize>,
    /// Seconds per sequence
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    /// Directory of clean sequences
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// weak, mid or strong
    #[arg(long)]
    pub severity: String,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Directory of clean sequences
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "alignment.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of clean sequences (not used with --platform)
    #[arg(long, required_unless_present = "platform")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Reuse a fitted alignment instead of calibrating
    #[arg(long, conflicts_with = "platform")]
    pub alignment: Option<PathBuf>,
    /// Train on recordings of the closed-loop scenario instead of a dataset
    #[arg(long)]
    pub platform: bool,
}

#[derive(Args, Debug)]
pub struct RepairArgs {
    /// A sequence file or a directory of them
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub alignment: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Clean references, matched by file name, for the d_clean column
    #[arg(long)]
    pub clean: Option<PathBuf>,
    /// Add per-step wall-clock latency (makes outputs run-dependent)
    #[arg(long)]
    pub record_latency: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of clean sequences
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also retrain with loss-term subsets
    #[arg(long)]
    pub ablation: bool,
    /// Evaluate this head instead of training one
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub alignment: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ClosedLoopArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = DefenseArg::Odca)]
    pub defense: DefenseArg,
    /// Head from `odca train --platform`; required for the odca defense
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Alignment written next to the head; identity when omitted
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Attack duration in seconds
    #[arg(long)]
    pub t_atk: Option<f64>,
    /// Per-frame suppression probability inside the attack window
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// With a head the sweep runs both with and without the defense
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub alignment: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated attack durations in seconds
    #[arg(long, value_delimiter = ',')]
    pub durations: Option<Vec<f64>>,
    #[arg(long)]
    pub rho: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// report.json written by `odca eval`
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DefenseArg {
    None,
    Odca,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    match cli.command {
        Command::Gen(a) => commands::gen(cfg, &a),
        Command::Attack(a) => commands::attack(cfg, &a),
        Command::Align(a) => commands::align(cfg, &a),
        Command::Train(a) => commands::train(cfg, &a),
        Command::Repair(a) => commands::repair(cfg, &a),
        Command::Eval(a) => commands::eval(cfg, &a),
        Command::Closedloop(a) => commands::closedloop(cfg, &a),
        Command::Sweep(a) => commands::sweep(cfg, &a),
        Command::Report(a) => commands::report(cfg, &a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
