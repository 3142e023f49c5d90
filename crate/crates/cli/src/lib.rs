//! `isacsim run | sweep | verify`.
//!
//! Exit status: 0 on success, 1 on validation errors (bad flags, bad
//! config, failed verification), 2 on runtime or numeric failures.

pub mod output;
pub mod plot;
pub mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use isacsim_core::engine::{run_simulation, run_sweep, SweepParam};
use isacsim_core::{parse_config, SimConfig, SimError};

use output::{metrics_csv, sweep_csv, trajectory_csv, OutputSet, SummaryFile};

pub const THREADS_ENV: &str = "ISACSIM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "isacsim", version, about = "Sensing-assisted channel estimation simulator for distributed MIMO")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one scenario and write metrics.csv, trajectory.csv, summary.json.
    Run(RunArgs),
    /// Repeat the scenario over AP counts or transmit powers; writes sweep.csv.
    Sweep(SweepArgs),
    /// Compare a produced summary.json with a golden one.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML config file; absent keys take reference-scenario defaults.
    pub config: PathBuf,
    /// Comma-separated seed list, overriding the config.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub seeds: Option<Vec<u64>>,
    /// Frame budget per seed, overriding the config.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ParamArg {
    Aps,
    Power,
}

impl From<ParamArg> for SweepParam {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::Aps => SweepParam::ApCount,
            ParamArg::Power => SweepParam::TxPower,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub param: ParamArg,
    /// Comma-separated values (AP counts, or dBm).
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub values: Vec<f64>,
    /// Also render SVG charts from sweep.csv.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Directory holding the produced summary.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory holding the golden summary.json (and optionally tolerances.toml).
    #[arg(long)]
    pub golden: PathBuf,
    /// Tolerance file; defaults to `<golden>/tolerances.toml`, then built-in defaults.
    #[arg(long)]
    pub tolerances: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "invalid input: {e:#}"),
            CliError::Runtime(e) => write!(f, "runtime failure: {e:#}"),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.into())
        } else {
            CliError::Runtime(e.into())
        }
    }
}

fn runtime(e: anyhow::Error) -> CliError {
    CliError::Runtime(e)
}

/// Worker cap from `ISACSIM_THREADS`; unset means the rayon default.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Validation(anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(e) => Err(CliError::Validation(anyhow::anyhow!("{THREADS_ENV}: {e}"))),
    }
}

/// Parses the config file and applies command-line overrides.
pub fn load_config(args: &RunArgs) -> Result<SimConfig, CliError> {
    let mut cfg = parse_config(&args.config)?;
    if let Some(seeds) = &args.seeds {
        if seeds.is_empty() {
            return Err(CliError::Validation(anyhow::anyhow!("--seeds needs at least one seed")));
        }
        cfg.seeds = seeds.clone();
    }
    if let Some(f) = args.frames {
        cfg.frames = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sorted_seeds(cfg: &SimConfig) -> Vec<u64> {
    let mut s = cfg.seeds.clone();
    s.sort_unstable();
    s.dedup();
    s
}

/// Writes every file or none.
fn commit(out: &Path, files: Vec<(&str, Vec<u8>)>) -> Result<OutputSet, CliError> {
    let mut set = OutputSet::create(out).map_err(CliError::Validation)?;
    for (name, bytes) in files {
        if let Err(e) = set.write(name, &bytes) {
            set.rollback();
            return Err(runtime(e));
        }
    }
    Ok(set)
}

pub fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    let threads = threads_from_env()?;
    let result = run_simulation::<f64>(&cfg, threads)?;
    let summary = SummaryFile::new(&result.summary, &sorted_seeds(&cfg), &cfg);
    let files = vec![
        ("metrics.csv", metrics_csv(&result.runs).map_err(runtime)?),
        ("trajectory.csv", trajectory_csv(&result.runs).map_err(runtime)?),
        ("summary.json", summary.to_json().map_err(runtime)?),
    ];
    commit(&args.out, files)?;
    println!(
        "mean position error {:.4} m over {} frames; results in {}",
        summary.mean_pos_error,
        summary.frames_run,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.run)?;
    let threads = threads_from_env()?;
    let param = SweepParam::from(args.param);
    let points = run_sweep::<f64>(&cfg, param, &args.values, threads)?;
    let csv = sweep_csv(param, &points, &cfg.estimators).map_err(runtime)?;
    let mut set = commit(&args.run.out, vec![("sweep.csv", csv)])?;
    if args.plot {
        set.adopt("sweep_throughput.svg");
        set.adopt("sweep_correlation.svg");
        if let Err(e) = plot::render_sweep_charts(&set.path("sweep.csv"), &args.run.out) {
            set.rollback();
            return Err(runtime(e));
        }
    }
    for p in points.iter().filter(|p| p.skipped.is_some()) {
        eprintln!("warning: value {} skipped: {}", p.value, p.skipped.as_deref().unwrap_or(""));
    }
    println!("sweep over {} values written to {}", points.len(), args.run.out.display());
    Ok(())
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<(), CliError> {
    for (dir, role) in [(&args.out, "--out"), (&args.golden, "--golden")] {
        if !dir.is_dir() {
            return Err(CliError::Validation(anyhow::anyhow!("{role} directory {} does not exist", dir.display())));
        }
    }
    let checks = verify::verify_dirs(&args.out, &args.golden, args.tolerances.as_deref()).map_err(CliError::Validation)?;
    print!("{}", verify::render_table(&checks));
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.field.as_str()).collect();
    if failed.is_empty() {
        println!("verify: all {} fields pass", checks.len());
        Ok(())
    } else {
        Err(CliError::Validation(anyhow::anyhow!("{} field(s) outside tolerance: {}", failed.len(), failed.join(", "))))
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

/// Full entry point; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
