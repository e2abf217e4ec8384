//! The `snl` command line: verification suites, gradient checks, toy
//! training, attention export and timing.
//!
//! [`run`] maps outcomes onto exit codes: 0 when everything passed, 1 when
//! a suite failed (or a run broke down numerically), 2 for usage and
//! configuration errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use snl_core::Error;

pub mod bench;
pub mod export;
pub mod verify;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Caps rayon's worker count; unset or `0` means one per core.
pub const THREADS_ENV: &str = "SNL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "snl", version, about = "Spectral nonlocal blocks: checks, training and export")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the spectral-oracle and unification invariant groups.
    Verify {
        /// Only run groups whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
        /// Directory for verify_summary.csv and verify_cases.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every block gradient.
    Gradcheck {
        /// Check one variant only (all by default).
        #[arg(long)]
        variant: Option<snl_core::Variant>,
        /// Relative error tolerance.
        #[arg(long, default_value_t = snl_core::gradcheck::DEFAULT_TOLERANCE)]
        tol: f64,
        /// Comma-separated problem seeds.
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        /// Directory for gradcheck.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the toy network and write its metrics history.
    Train {
        /// JSON file with `dataset`, `train` and optional `block` sections.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write attention rows of one block as PGM heatmaps.
    ExportAttention {
        /// Feature matrix (binary or CSV), one row per grid position.
        #[arg(long)]
        input: PathBuf,
        /// Block configuration JSON.
        #[arg(long)]
        block: PathBuf,
        /// Comma-separated row-major grid positions.
        #[arg(long, value_delimiter = ',', required = true)]
        positions: Vec<usize>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Grid height; the grid is taken to be square when omitted.
        #[arg(long)]
        height: Option<usize>,
        /// Saved block parameters; freshly initialized from `--seed` otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time block_forward per variant and grid size.
    Bench {
        /// Comma-separated vertex counts; each must be a perfect square.
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 256, 1024])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Directory for bench.csv and bench_order.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A command's failure, already sorted by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failed(_) => EXIT_FAIL,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Json(_) | Error::Format(_) => CliError::Usage(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Errors while reading user-supplied inputs are usage errors regardless
/// of their kind.
pub(crate) fn input<T>(what: &Path, r: snl_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Usage(format!("{}: {e}", what.display())))
}

pub(crate) fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Failed(e.to_string()))
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    let outcome = thread_pool().and_then(|pool| pool.install(|| dispatch(cli.command)));
    match outcome {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprintln!("error: {m}"),
                CliError::Failed(m) => eprintln!("failed: {m}"),
            }
            e.code()
        }
    }
}

/// `Ok(false)` means the command ran but something did not pass.
fn dispatch(command: Command) -> CliResult<bool> {
    match command {
        Command::Verify { filter, out } => verify_cmd(filter.as_deref(), out.as_deref()),
        Command::Gradcheck { variant, tol, seeds, out } => gradcheck_cmd(variant, tol, &seeds, out.as_deref()),
        Command::Train { config, seed, out } => train_cmd(&config, seed, &out),
        Command::ExportAttention {
            input,
            block,
            positions,
            out,
            height,
            params,
            seed,
        } => export::export_attention(&export::ExportArgs {
            input: &input,
            block: &block,
            positions: &positions,
            out: &out,
            height,
            params: params.as_deref(),
            seed,
        }),
        Command::Bench { sizes, reps, out } => bench::bench(&sizes, reps, out.as_deref()),
    }
}

fn verify_cmd(filter: Option<&str>, out: Option<&Path>) -> CliResult<bool> {
    let reports = verify::run_groups(filter)?;
    if reports.is_empty() {
        return Err(CliError::Usage(format!("no verify group matches {:?}", filter.unwrap_or(""))));
    }
    print!("{}", verify::format_table(&reports));
    if let Some(dir) = out {
        create_dir(dir)?;
        let mut buf = Vec::new();
        verify::write_summary_csv(&reports, &mut buf)?;
        write_file(&dir.join("verify_summary.csv"), &buf)?;
        buf.clear();
        verify::write_cases_csv(&reports, &mut buf)?;
        write_file(&dir.join("verify_cases.csv"), &buf)?;
    }
    Ok(reports.iter().all(|r| r.passed()))
}

fn gradcheck_cmd(variant: Option<snl_core::Variant>, tol: f64, seeds: &[u64], out: Option<&Path>) -> CliResult<bool> {
    use snl_core::blocks::{BlockConfig, ALL_VARIANTS};
    use snl_core::gradcheck::{format_table, gradient_reports, write_csv, DEFAULT_EPS};

    if !(tol > 0.0) {
        return Err(CliError::Usage(format!("--tol must be positive, got {tol}")));
    }
    let variants: Vec<_> = match variant {
        Some(v) => vec![v],
        None => ALL_VARIANTS.to_vec(),
    };
    let mut rows = Vec::new();
    for v in variants {
        for backprop in [true, false] {
            let cfg = BlockConfig::new(v, 4, 2).with_order(3).with_backprop_affinity(backprop);
            for &seed in seeds {
                let mode = if backprop { "affinity" } else { "frozen" };
                let group = format!("{v}/{mode}/seed{seed}");
                for r in gradient_reports(&cfg, seed, tol, DEFAULT_EPS)? {
                    rows.push((group.clone(), r));
                }
            }
        }
    }
    let view = || rows.iter().map(|(g, r)| (g.as_str(), r));
    print!("{}", format_table(view()));
    let failed = rows.iter().filter(|(_, r)| !r.passed).count();
    println!("{}/{} gradients within {tol:e}", rows.len() - failed, rows.len());
    if let Some(dir) = out {
        create_dir(dir)?;
        let mut buf = Vec::new();
        write_csv(view(), &mut buf)?;
        write_file(&dir.join("gradcheck.csv"), &buf)?;
    }
    Ok(failed == 0)
}

fn train_cmd(config: &Path, seed: u64, out: &Path) -> CliResult<bool> {
    use snl_core::harness::{run, write_metrics_csv, TrainConfig};

    let text = input(config, fs::read_to_string(config).map_err(Error::from))?;
    let cfg: TrainConfig = input(config, serde_json::from_str(&text).map_err(Error::from))?;
    input(config, cfg.validate())?;
    let result = run(&cfg, seed)?;
    create_dir(out)?;
    let mut buf = Vec::new();
    write_metrics_csv(&result.history, &mut buf)?;
    write_file(&out.join("metrics.csv"), &buf)?;
    let last = result.final_metrics();
    println!(
        "step {}  loss {:.6}  accuracy {:.4}  ({})",
        last.step,
        last.loss,
        last.accuracy,
        cfg.block.map_or("baseline".to_string(), |b| b.variant.to_string())
    );
    Ok(true)
}
