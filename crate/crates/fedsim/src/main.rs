//! Command-line experiment runner.
//!
//! `run` sweeps client counts with repeated seeded runs, `baseline`
//! trains only the centralized reference, `rerun` replays a previous
//! run from its manifest. Exit codes: 0 all runs succeeded, 2 some runs
//! failed (their rows carry the error), 1 nothing ran.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedsim::federation::FederationConfig;
use fedsim::harness::{
    emit_report, run_from_manifest, run_grid_with_manifest, DataSource, ExperimentGrid,
    GridResult, Manifest, RunKind,
};

const QUICK_REPS: usize = 10;
const FULL_REPS: usize = 30;
const TEST_FRACTION: f64 = 0.2;

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Federated training simulator with secure aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep client counts with repeated seeded runs and write result tables.
    Run(RunArgs),
    /// Train only the centralized baseline on the same splits.
    Baseline(BaselineArgs),
    /// Replay a previous run from its manifest, bit for bit.
    Rerun(RerunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Comma-separated client counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "3,5,10,15,30")]
    clients: Vec<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct RerunArgs {
    /// Manifest written by a previous run.
    #[arg(long, value_name = "FILE")]
    manifest: PathBuf,
    /// Output directory for the replayed tables.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Clone, Debug)]
struct SyntheticSpec {
    m: usize,
    n: usize,
    classes: usize,
    separation: f64,
}

fn parse_synthetic(s: &str) -> Result<SyntheticSpec, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!(
            "expected rows,features,classes,separation, got {s:?}"
        ));
    }
    Ok(SyntheticSpec {
        m: parts[0].trim().parse().map_err(|e| format!("rows: {e}"))?,
        n: parts[1].trim().parse().map_err(|e| format!("features: {e}"))?,
        classes: parts[2].trim().parse().map_err(|e| format!("classes: {e}"))?,
        separation: parts[3]
            .trim()
            .parse()
            .map_err(|e| format!("separation: {e}"))?,
    })
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SourceArgs {
    /// Glob pattern of whitespace-separated sensor log files.
    #[arg(long, value_name = "GLOB")]
    data: Option<String>,
    /// Generate Gaussian blobs instead: rows,features,classes,separation.
    #[arg(long, value_name = "M,N,C,SEP", value_parser = parse_synthetic)]
    synthetic: Option<SyntheticSpec>,
}

#[derive(Args)]
struct CommonArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Repetitions per cell; defaults to 10, or 30 under --full-scale.
    #[arg(long)]
    reps: Option<usize>,
    /// Run the full study scale (30 repetitions) instead of the quick default.
    #[arg(long)]
    full_scale: bool,
    /// Hard cap on federation rounds.
    #[arg(long, default_value_t = 20)]
    rounds: usize,
    /// Local epochs per round.
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// Mini-batch size.
    #[arg(long, default_value_t = 32)]
    batch: usize,
    /// Learning rate.
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Stop a federation once the round-over-round weight change is this small.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "64,32")]
    hidden: Vec<usize>,
    /// Fixed-point fractional bits used by secure aggregation.
    #[arg(long, default_value_t = 24)]
    frac_bits: u32,
    /// Base seed; every split, partition, and training run derives from it.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory for CSV tables, manifest, and final models.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Merge client models in the clear instead of through masked sums.
    #[arg(long)]
    no_secure_agg: bool,
    /// Weight client contributions by shard size.
    #[arg(long)]
    weighted: bool,
}

fn grid_from(common: &CommonArgs, clients: Vec<usize>) -> ExperimentGrid {
    let repetitions = common
        .reps
        .unwrap_or(if common.full_scale { FULL_REPS } else { QUICK_REPS });
    let source = match (&common.source.data, &common.source.synthetic) {
        (Some(pattern), None) => DataSource::Files {
            pattern: pattern.clone(),
            keep_null: false,
        },
        (None, Some(s)) => DataSource::Synthetic {
            m: s.m,
            n: s.n,
            classes: s.classes,
            separation: s.separation,
        },
        _ => unreachable!("clap enforces exactly one source"),
    };
    ExperimentGrid {
        client_counts: clients,
        repetitions,
        test_fraction: TEST_FRACTION,
        standardize: true,
        include_baseline: true,
        source,
        base: FederationConfig {
            rounds: common.rounds,
            local_epochs: common.epochs,
            batch_size: common.batch,
            learning_rate: common.lr,
            convergence_tol: common.tol,
            frac_bits: common.frac_bits,
            seed: common.seed,
            secure_agg: !common.no_secure_agg,
            weighted: common.weighted,
            hidden_layers: common.hidden.clone(),
            ..FederationConfig::default()
        },
    }
}

fn configure_jobs(jobs: Option<usize>) -> Result<(), String> {
    let Some(n) = jobs else { return Ok(()) };
    if n == 0 {
        return Err("--jobs must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot size the worker pool: {e}"))
}

fn abort(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::FAILURE
}

fn print_summaries(result: &GridResult) {
    for s in &result.summaries {
        let label = match s.kind {
            RunKind::Baseline => "baseline".to_string(),
            RunKind::Federated => format!("federated t={}", s.t),
        };
        match &s.stats {
            Some(stats) => println!(
                "{label}: runs={} excluded={} accuracy {:.4} (std {:.4}) macro_f1 {:.4} (std {:.4})",
                s.runs, s.excluded_count, stats[0].0, stats[0].1, stats[3].0, stats[3].1
            ),
            None => println!("{label}: all {} runs failed", s.excluded_count),
        }
    }
}

fn finish(result: &GridResult, manifest: &Manifest, out: &Path) -> ExitCode {
    if let Err(e) = emit_report(result, manifest, out) {
        return abort(e);
    }
    print_summaries(result);
    println!("wrote tables, manifest, and models under {}", out.display());
    let failed = result.failed_count();
    if failed > 0 {
        eprintln!("{failed} run(s) failed; see the error column in raw.csv");
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn run_and_report(grid: &ExperimentGrid, out: &Path) -> ExitCode {
    match run_grid_with_manifest(grid) {
        Ok((result, manifest)) => finish(&result, &manifest, out),
        Err(e) => abort(e),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Keep 2 for partial results; help/version exit clean.
            let code = if e.use_stderr() {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run(args) => {
            if let Err(msg) = configure_jobs(args.common.jobs) {
                return abort(msg);
            }
            run_and_report(&grid_from(&args.common, args.clients), &args.common.out)
        }
        Command::Baseline(args) => {
            if let Err(msg) = configure_jobs(args.common.jobs) {
                return abort(msg);
            }
            run_and_report(&grid_from(&args.common, Vec::new()), &args.common.out)
        }
        Command::Rerun(args) => {
            if let Err(msg) = configure_jobs(args.jobs) {
                return abort(msg);
            }
            let manifest = match Manifest::load(&args.manifest) {
                Ok(m) => m,
                Err(e) => return abort(e),
            };
            match run_from_manifest(&manifest) {
                Ok(result) => finish(&result, &manifest, &args.out),
                Err(e) => abort(e),
            }
        }
    }
}
