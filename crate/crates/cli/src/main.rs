mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "capam",
    version,
    about = "Multi-robot task allocation with a learned graph policy"
)]
struct Cli {
    /// Worker threads for parallel rollouts (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write random instances or a benchmark suite as JSON files.
    Generate(GenerateArgs),
    /// Train a policy from a TOML config.
    Train(TrainArgs),
    /// Roll out a trained checkpoint on a set of instances.
    Eval(EvalArgs),
    /// Run one reference solver on a set of instances.
    Baseline(BaselineArgs),
    /// Run several solvers and write per-case, summary and matrix tables.
    Bench(BenchArgs),
    /// Finite-difference check of the model gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SeedArg {
    /// Master seed.
    #[arg(long, env = "CAPAM_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Tasks per instance (suite default: 100).
    #[arg(long)]
    tasks: Option<usize>,
    /// Robot count; with a suite, a comma-separated list of team sizes.
    #[arg(long, value_delimiter = ',')]
    robots: Vec<usize>,
    /// Number of instances when no suite is given.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// `default` for the tight + slack benchmark, or a TOML file of `[[suite]]` tables.
    #[arg(long)]
    suite: Option<String>,
    /// Round robot capacities to integers.
    #[arg(long)]
    integer_capacity: bool,
    #[command(flatten)]
    seed: SeedArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML training config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, env = "CAPAM_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Keep only the final checkpoint.
    #[arg(long)]
    final_only: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Mode {
    Greedy,
    Sample,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Instance file or directory of instance files.
    #[arg(long)]
    instances: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Greedy)]
    mode: Mode,
    #[command(flatten)]
    seed: SeedArg,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Leave the latency column empty, making the CSV reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
    /// Directory for one JSONL decision trace per instance.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// myopic, bigmrta, ils, oracle or random.
    #[arg(long)]
    solver: String,
    #[arg(long)]
    instances: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out: PathBuf,
    /// Wall-clock budget of the local search per instance.
    #[arg(long, default_value_t = 1000)]
    ils_budget_ms: u64,
    #[arg(long)]
    no_timing: bool,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    instances: PathBuf,
    /// Checkpoint for the learned policy (solver name `capam`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated solvers; defaults to the policy (if a checkpoint is
    /// given) and every baseline except the exhaustive oracle.
    #[arg(long, value_delimiter = ',')]
    solvers: Vec<String>,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1000)]
    ils_budget_ms: u64,
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[command(flatten)]
    seed: SeedArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let outcome = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Bench(a) => commands::bench(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
