#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "qfan",
    version,
    about = "Blockwise autoregressive quantum-feature generative model"
)]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for outputs whose path is not given explicitly.
    #[arg(long, global = true, env = "QFAN_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a shower dataset.
    GenData(GenDataArgs),
    /// Split a dataset into disjoint train and test files.
    Split(SplitArgs),
    /// Train a model bundle.
    Train(TrainArgs),
    /// Sample images from a trained bundle.
    Generate(GenerateArgs),
    /// Compare a generated set against truth.
    Evaluate(EvaluateArgs),
    /// Run an ablation sweep.
    Ablate(AblateArgs),
    /// Empirical checks of the analytic guarantees.
    TheoryCheck(TheoryArgs),
    /// Capacity, block count and cache size per image size and qubit count.
    ScaleTable(ScaleArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 12)]
    pub d: usize,
    #[arg(long, default_value_t = 7000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generator parameters (TOML with a `[recipe]` table).
    #[arg(long)]
    pub recipe: Option<PathBuf>,
    /// Output file; a `.csv` extension selects CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 6000)]
    pub train: usize,
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_train: Option<PathBuf>,
    #[arg(long)]
    pub out_test: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bundle directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use exact expectations instead of finite shots.
    #[arg(long)]
    pub exact: bool,
    /// Override the configuration seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exact expectations instead of the bundle's shot count.
    #[arg(long, conflicts_with = "shots")]
    pub exact: bool,
    #[arg(long)]
    pub shots: Option<usize>,
    /// Decoder output only, without sampled residuals.
    #[arg(long)]
    pub no_residuals: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub gen: PathBuf,
    /// Number of near-equal blocks for the boundary profile.
    #[arg(long, conflicts_with = "block_size")]
    pub blocks: Option<usize>,
    /// Block width for the boundary profile (last block may be short).
    #[arg(long)]
    pub block_size: Option<usize>,
    /// Report path; CSV figure data is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum SuiteArg {
    Weight2,
    Blocksize,
    Rff,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub suite: SuiteArg,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Base run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 1000)]
    pub n_gen: usize,
    /// Decoder output only, without sampled residuals.
    #[arg(long)]
    pub no_residuals: bool,
    /// CSV table path; a JSON twin is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum TheorySuite {
    Sketch,
    Noise,
    Counts,
    Ridge,
}

#[derive(Args, Debug)]
pub struct TheoryArgs {
    #[arg(long, value_enum)]
    pub suite: TheorySuite,
    /// Trained bundle (noise suite).
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "64,256,1024")]
    pub shots: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub pairs: usize,
    #[arg(long, default_value_t = 10_000)]
    pub plans: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScaleArgs {
    #[arg(long, value_delimiter = ',', default_value = "12,368,533,6480,40500")]
    pub d: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "3,5,6,8,10")]
    pub nq: Vec<usize>,
    /// Sketch sizes, one per row (default 32 for every row).
    #[arg(long, value_delimiter = ',')]
    pub m: Vec<usize>,
    #[arg(long, default_value_t = 1.5)]
    pub rho_min: f64,
    /// Training-set size for the cache estimate.
    #[arg(long, default_value_t = 6000)]
    pub n: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let ctx = commands::Context {
        out_dir: cli.out_dir.unwrap_or_else(|| PathBuf::from(".")),
    };
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(&ctx, a),
        Command::Split(a) => commands::split(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Generate(a) => commands::generate(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Ablate(a) => commands::ablate(&ctx, a),
        Command::TheoryCheck(a) => commands::theory_check(&ctx, a),
        Command::ScaleTable(a) => commands::scale_table(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
