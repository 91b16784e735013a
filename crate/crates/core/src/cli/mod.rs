//! The `topk-attn` command-line front end.
//!
//! Every command takes an optional `--config <file.toml>`; flags override
//! values from the file, and the resolved configuration is printed to
//! stderr as TOML before the command runs, so a run can be repeated from
//! that record alone. Exit status is 0 on success, 1 when a run fails or a
//! check is out of tolerance, and 2 for usage and configuration errors.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{
    echo_config, load_config, BenchConfig, EvalConfig, ModelSettings, Sublayer, SwapEvalConfig,
    SweepConfig, TrainRunConfig,
};
pub use crate::engine::gradcheck::GradcheckConfig;

use crate::bench::BenchTarget;
use crate::engine::AttentionMode;
use crate::reference::TopK;
use crate::tensor::DType;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "topk-attn", version, about = "Memory-efficient top-k attention: benchmarks, checks and toy training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Time and measure one attention, feed-forward or stack configuration.
    Bench(BenchArgs),
    /// Run a grid of benchmark cases.
    Sweep(SweepArgs),
    /// Check the top-k backward pass against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train a small transformer on a synthetic task.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the sublayer modes it was trained with.
    Eval(EvalArgs),
    /// Evaluate a checkpoint with one sublayer switched to another mode.
    SwapEval(SwapArgs),
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// mha, ff or stack
    target: BenchTarget,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    mode: Option<AttentionMode>,
    /// Sequence length (tokens for ff).
    #[arg(long = "L", visible_alias = "length")]
    length: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    /// Kept keys per query: a positive integer or `all`.
    #[arg(long)]
    k: Option<TopK>,
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dtype: Option<DType>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Tracked-byte budget.
    #[arg(long)]
    budget: Option<usize>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also write JSON lines here.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    target: Option<BenchTarget>,
    #[arg(long, value_delimiter = ',')]
    modes: Option<Vec<AttentionMode>>,
    #[arg(long, value_delimiter = ',')]
    lengths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    chunks: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<TopK>>,
    #[arg(long = "L", visible_alias = "length")]
    length: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    k: Option<TopK>,
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dtype: Option<DType>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    l_q: Option<usize>,
    #[arg(long)]
    l_k: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    d_v: Option<usize>,
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    analytic_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum TaskKind {
    Copy,
    Listops,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskKind>,
    /// Copy task: symbols to copy.
    #[arg(long)]
    length: Option<usize>,
    /// Copy task: alphabet size.
    #[arg(long)]
    vocab: Option<usize>,
    /// ListOps: maximum nesting depth.
    #[arg(long)]
    max_depth: Option<usize>,
    /// ListOps: maximum token count.
    #[arg(long)]
    max_length: Option<usize>,
    #[arg(long)]
    task_seed: Option<u64>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    tied_output: Option<bool>,
    #[arg(long)]
    attn_mode: Option<AttentionMode>,
    #[arg(long)]
    attn_k: Option<TopK>,
    #[arg(long)]
    attn_chunk: Option<usize>,
    #[arg(long)]
    ff_mode: Option<AttentionMode>,
    #[arg(long)]
    ff_k: Option<TopK>,
    #[arg(long)]
    ff_chunk: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Gradient-norm clip; 0 disables.
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    dtype: Option<DType>,
    /// Write the trained weights here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    start: Option<u64>,
}

#[derive(Debug, Args)]
struct SwapArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    sublayer: Option<Sublayer>,
    /// Mode the checkpoint was trained with.
    #[arg(long)]
    from: Option<AttentionMode>,
    #[arg(long)]
    to: Option<AttentionMode>,
    #[arg(long)]
    k: Option<TopK>,
    #[arg(long)]
    chunk: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    start: Option<u64>,
}

/// Parses `args` (program name first) and runs the command, writing results
/// to `out` and diagnostics plus the resolved configuration to `err`.
/// Returns the process exit status.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match commands::dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.message());
            e.code()
        }
    }
}

/// Entry point for the binary: process arguments, stdout and stderr.
pub fn main_exit_code() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}
