//! `private-od` command line: reproducible file-to-file pipelines over the
//! library. Every randomized command takes an explicit `--seed`.
//!
//! Exit codes: 0 success, 2 configuration or parameter error, 3 malformed
//! input, 4 I/O failure.

mod analysis;
mod pipeline;

pub use analysis::{tune_table, TuneRow};

use crate::{AdminLevel, Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(
    name = "private-od",
    version,
    about = "Differentially private O-D matrices from call detail records"
)]
pub struct Cli {
    /// Worker threads for parallel stages (default: one per core). Outputs do
    /// not depend on this value.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic CDR corpus and tower map.
    Synth(SynthArgs),
    /// Parse CDR and tower files into trips, populations and a skip report.
    Ingest(IngestArgs),
    /// Build daily O-D matrices (optionally trip-capped) from a trips file.
    Build(BuildArgs),
    /// Release private matrices for each ε and record them in the ledger.
    Privatize(PrivatizeArgs),
    /// Tabulate ε choices for grids of α, β and T.
    Tune(TuneArgs),
    /// Run the mobility-coupled SIR scenario on private and non-private inputs.
    SimulateSir(SimulateSirArgs),
    /// Score aid targeting after a shock on private vs. non-private matrices.
    Target(TargetArgs),
    /// Run the membership-inference attack harness.
    Mia(MiaArgs),
    /// Consolidated error, suppression and tuning reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of admin-2 regions.
    #[arg(long)]
    pub k: usize,
    /// Number of days to generate.
    #[arg(long)]
    pub days: u32,
    /// Number of subscribers.
    #[arg(long)]
    pub subscribers: u32,
    /// Probability that an event is preceded by an inter-region move.
    #[arg(long, default_value_t = 0.1)]
    pub mobility: f64,
    /// Mean events per subscriber per day.
    #[arg(long, default_value_t = 2.0)]
    pub events_per_day: f64,
    /// First calendar day (YYYY-MM-DD).
    #[arg(long)]
    pub start_date: Option<chrono::NaiveDate>,
    /// Master seed.
    #[arg(long)]
    pub seed: u64,
    /// Receives cdr.csv, towers.csv and synth.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CDR CSV: timestamp,caller_id,callee_id,duration_s,tower_id.
    #[arg(long)]
    pub cdr: PathBuf,
    /// Tower map CSV: tower_id,admin2_id,admin3_id.
    #[arg(long)]
    pub towers: PathBuf,
    /// Receives trips.csv, populations.csv and ingest_report.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Trips CSV written by `ingest`.
    #[arg(long)]
    pub trips: PathBuf,
    /// Admin level: 2 or 3.
    #[arg(long)]
    pub level: AdminLevel,
    /// Ingest report supplying k and the day count (default: next to the trips file).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Number of regions; overrides the ingest report.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of days; overrides the ingest report.
    #[arg(long)]
    pub days: Option<u32>,
    /// Cap each subscriber at T trips per day.
    #[arg(long, value_name = "T", conflicts_with = "cap_percentile")]
    pub cap: Option<u32>,
    /// Cap at the given percentile of trips per subscriber-day.
    #[arg(long, value_name = "P")]
    pub cap_percentile: Option<f64>,
    /// Seed for the capping draw (required when capping).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Receives od_admin<L>.csv, its JSON sidecar and contributions_admin<L>.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PrivatizeArgs {
    /// Non-private matrix CSV written by `build` (sidecar alongside).
    #[arg(long)]
    pub matrices: PathBuf,
    /// Privacy parameters, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub epsilon: Vec<f64>,
    /// Suppression threshold.
    #[arg(long, default_value_t = 15)]
    pub tau: u64,
    /// Sensitivity T (default: the build cap, else 1).
    #[arg(long, value_name = "T")]
    pub cap: Option<u32>,
    /// Master seed for the release noise.
    #[arg(long)]
    pub seed: u64,
    /// Per-subscriber contributions (default: contributions_admin<L>.csv next to the matrices).
    #[arg(long)]
    pub contributions: Option<PathBuf>,
    /// JSON-lines ledger to append to (default: <out-dir>/ledger.jsonl).
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    /// Receives eps_<ε>/day_<d>.csv and sidecars.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    /// Error tolerances α.
    #[arg(long, value_delimiter = ',', required = true)]
    pub alpha: Vec<u64>,
    /// Failure probabilities β.
    #[arg(long, value_delimiter = ',', required = true)]
    pub beta: Vec<f64>,
    /// Trip caps T.
    #[arg(long = "cap", value_delimiter = ',', default_value = "1")]
    pub caps: Vec<u32>,
    /// Table format.
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    pub format: TableFormat,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateSirArgs {
    /// key = value scenario: origin (id or `random`), seed, beta, alpha_mix,
    /// mu, dt, threshold, recovery_form, fraction, epsilons, T, tau,
    /// private_populations.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Non-private matrix CSV (sidecar alongside).
    #[arg(long)]
    pub matrices: PathBuf,
    /// Populations CSV written by `ingest`.
    #[arg(long)]
    pub populations: PathBuf,
    /// Receives trajectory_*.csv and sir_metrics.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TargetArgs {
    /// key = value window: affected, first_day, last_day, k, epsilons, T,
    /// tau, seed, sweep_max.
    #[arg(long)]
    pub window: PathBuf,
    /// Non-private matrix CSV (sidecar alongside).
    #[arg(long)]
    pub matrices: PathBuf,
    /// Receives targeting.csv, topk_sweep.csv and topk_nonprivate.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct MiaArgs {
    /// Trips CSV written by `ingest`; supplies the membership labels.
    #[arg(long)]
    pub trips: PathBuf,
    /// Admin level: 2 or 3.
    #[arg(long)]
    pub level: AdminLevel,
    /// Non-private feature matrices (default: built from the trips).
    #[arg(long)]
    pub matrices: Option<PathBuf>,
    /// Ingest report supplying k and the day count (default: next to the trips file).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Number of regions; overrides the ingest report.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of days; overrides the ingest report.
    #[arg(long)]
    pub days: Option<u32>,
    /// Number of target subscribers.
    #[arg(long, default_value_t = 100)]
    pub targets: usize,
    /// Minimum trips a target needs in each half of the period.
    #[arg(long, default_value_t = 10)]
    pub min_trips: u32,
    /// Privacy parameters, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1")]
    pub epsilon: Vec<f64>,
    /// Suppression threshold.
    #[arg(long, default_value_t = 15)]
    pub tau: u64,
    /// Sensitivity T.
    #[arg(long, value_name = "T", default_value_t = 1)]
    pub cap: u32,
    /// Master seed for targets, balancing and release noise.
    #[arg(long)]
    pub seed: u64,
    /// Receives mia_table.csv and mia_aucs.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Non-private matrix CSV (sidecar alongside).
    #[arg(long)]
    pub matrices: PathBuf,
    /// Output directory of `privatize`.
    #[arg(long)]
    pub private_dir: PathBuf,
    /// Suppression threshold for the suppression table.
    #[arg(long, default_value_t = 15.0)]
    pub threshold: f64,
    /// Error tolerances α for the tuning table.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub alpha: Vec<u64>,
    /// Failure probabilities β for the tuning table.
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    pub beta: Vec<f64>,
    /// Trip caps T for the tuning table.
    #[arg(long = "cap", value_delimiter = ',', default_value = "1")]
    pub caps: Vec<u32>,
    /// Receives error_stats.csv, suppression.csv, tune.csv and summary.json.
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse { .. } => 3,
        Error::Io { .. } | Error::Stream(_) => 4,
        _ => 2,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.jobs {
        Some(0) => Err(Error::Param("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            pool.install(|| dispatch(cli.command))
        }
        None => dispatch(cli.command),
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => pipeline::synth(&a),
        Command::Ingest(a) => pipeline::ingest(&a),
        Command::Build(a) => pipeline::build(&a),
        Command::Privatize(a) => pipeline::privatize(&a),
        Command::Tune(a) => analysis::tune(&a),
        Command::SimulateSir(a) => analysis::simulate_sir(&a),
        Command::Target(a) => analysis::target(&a),
        Command::Mia(a) => analysis::mia(&a),
        Command::Report(a) => analysis::report(&a),
    }
}

/// Fails with a configuration error naming `path` unless it is a file.
fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} not found: {}", path.display())))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn check_epsilons(eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::Param("at least one epsilon is required".into()));
    }
    match eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        Some(e) => Err(Error::Param(format!("epsilon must be positive and finite, got {e}"))),
        None => Ok(()),
    }
}

/// Output path of one release inside a privatize directory.
pub fn release_path(dir: &Path, epsilon: f64, day: u32) -> PathBuf {
    dir.join(format!("eps_{epsilon}")).join(format!("day_{day:03}.csv"))
}

pub fn matrix_file_name(level: AdminLevel) -> String {
    format!("od_admin{level}.csv")
}

pub fn contributions_file_name(level: AdminLevel) -> String {
    format!("contributions_admin{level}.csv")
}

/// Shortest round-trip decimal, or empty for `None`.
fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
