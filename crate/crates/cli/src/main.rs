use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "rakeflow", version, about = "Raking-ratio calibration, raked tests and their Monte Carlo checks")]
struct Cli {
    /// Master seed for every random stream (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rake a sample to the margins of a model file.
    Rake(RakeArgs),
    /// Variance trajectory of the raked Gaussian limit.
    Variance(VarianceArgs),
    /// Plain and raked Z-tests of a mean.
    Ztest(ZtestArgs),
    /// Plain and raked chi-square goodness-of-fit tests.
    Chisq(ChisqArgs),
    /// Monte Carlo level and power of the raked tests.
    McPower(McPowerArgs),
    /// Auxiliary sources: draws and deviation bounds.
    Aux {
        #[command(subcommand)]
        command: AuxCommand,
    },
    /// Split a budget between primary and source observations.
    Budget(BudgetArgs),
    /// Simulate raked and learned-raked processes.
    Simulate(SimulateArgs),
    /// Fit the learned-vs-exact deviation rate from a simulation.
    RateFit(RateFitArgs),
    /// Run the worked raked-mean example.
    AppendixA(AppendixArgs),
}

#[derive(Args, Debug)]
struct RakingFlags {
    /// Number of passes over the raking order.
    #[arg(long, conflicts_with = "to_stability")]
    cycles: Option<usize>,
    /// Rake until every margin holds within --tol.
    #[arg(long)]
    to_stability: bool,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_cycles: Option<usize>,
}

#[derive(Args, Debug)]
struct SampleFlags {
    /// CSV sample with a header row.
    #[arg(long)]
    sample: PathBuf,
    /// Model file declaring partitions and margins.
    #[arg(long)]
    margins: PathBuf,
    /// Numeric column of the sample.
    #[arg(long, default_value = "value")]
    value: String,
}

#[derive(Args, Debug)]
struct RakeArgs {
    #[command(flatten)]
    input: SampleFlags,
    #[command(flatten)]
    raking: RakingFlags,
    /// Per-observation weights CSV (default: <out-dir>/weights.csv).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VarianceArgs {
    /// Two-by-two law as p_A,p_B,p_AB.
    #[arg(long, value_delimiter = ',', conflicts_with = "cells", requires = "f")]
    spec: Option<Vec<f64>>,
    /// Values of f on A∩B, A∩Bᶜ, Aᶜ∩B, Aᶜ∩Bᶜ.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    f: Option<Vec<f64>>,
    /// Model file with [truth] and [[function]] sections.
    #[arg(long)]
    cells: Option<PathBuf>,
    /// Partition names in visiting order (model file only).
    #[arg(long, value_delimiter = ',')]
    order: Option<Vec<String>>,
    /// Number of bridge steps.
    #[arg(long, default_value_t = 6)]
    stages: usize,
}

#[derive(Args, Debug)]
struct ZtestArgs {
    #[command(flatten)]
    input: SampleFlags,
    /// Null mean P0(f).
    #[arg(long, allow_negative_numbers = true)]
    p0: f64,
    /// Standard deviation of the raked limit; plug-in estimate when absent.
    #[arg(long)]
    sigma: Option<f64>,
    /// Standard deviation for the plain statistic; plug-in when absent.
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    raking: RakingFlags,
}

#[derive(Args, Debug)]
struct ChisqArgs {
    #[command(flatten)]
    input: SampleFlags,
    /// Partition whose block weights are tested.
    #[arg(long)]
    test: String,
    /// Null margin of the tested partition.
    #[arg(long, value_delimiter = ',')]
    p0: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "standard")]
    dof_convention: String,
    #[command(flatten)]
    raking: RakingFlags,
}

#[derive(Args, Debug)]
struct McPowerArgs {
    /// Model file with [truth] and [test] sections.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand, Debug)]
enum AuxCommand {
    /// Draw a learned margin for one partition.
    Draw {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        partition: String,
        /// Source size n_N.
        #[arg(long)]
        size: u64,
    },
    /// Evaluate the explicit deviation bounds.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        /// Primary sample size n.
        #[arg(long)]
        n: u64,
        /// λ grid for the Hoeffding bound.
        #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 1.5, 2.0])]
        lambda: Vec<f64>,
        /// Threshold t of the deviation bound.
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Source sizes n_N.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<u64>,
        #[arg(long, default_value_t = rakeflow::auxinfo::DEFAULT_SIZE_THRESHOLD)]
        threshold: f64,
    },
}

#[derive(Args, Debug)]
struct BudgetArgs {
    /// Total budget B.
    #[arg(long = "B")]
    total: f64,
    /// Cost C of a primary observation.
    #[arg(long = "C")]
    unit_cost: f64,
    /// Cost c0 of a source observation.
    #[arg(long = "c0")]
    source_cost: f64,
    /// vc:<nu0>, br:<r0> or unit.
    #[arg(long, default_value = "vc:2")]
    regime: String,
    /// rate_balanced or spend_all.
    #[arg(long, default_value = "rate_balanced")]
    strategy: String,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Model file with [truth], [[function]] and [experiment] sections.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args, Debug)]
struct RateFitArgs {
    /// deviation.csv written by `simulate`.
    #[arg(long)]
    input: PathBuf,
    /// Primary sample size to fit at (the only one present when absent).
    #[arg(long)]
    n: Option<u64>,
}

#[derive(Args, Debug)]
struct AppendixArgs {
    /// Exit with status 1 when a published number is not reproduced.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
