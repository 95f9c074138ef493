//! `navbench`: map generation, training, evaluation, benchmarking and
//! analysis for the maze-navigation benchmark.
//!
//! Every flag can also be given through an environment variable named
//! `NAVBENCH_<FLAG>` (upper case, dashes as underscores), and any config key
//! through `--set section.key=value`.

mod analyze;
mod artifacts;
mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "navbench", version, about = "Maze-navigation benchmark: train, evaluate and analyse map-exploiting agents")]
pub struct Cli {
    /// TOML config file; values not given fall back to built-in defaults.
    #[arg(long, global = true, env = "NAVBENCH_CONFIG")]
    pub config: Option<PathBuf>,

    /// Override one config key, e.g. `--set train.learning_rate=5e-4`.
    /// Applied after the config file, before dedicated flags.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Log more (`-v` debug, `-vv` trace). NAVBENCH_LOG takes a filter.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the map pool: manifest plus one file per map.
    GenMaps(GenMapsArgs),
    /// Train an agent on one stage; writes checkpoints and a training CSV.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one stage, or replay a previous evaluation.
    Eval(EvalArgs),
    /// Evaluate all five stages (and the unseen-map variant) and summarise.
    Bench(BenchArgs),
    /// Evaluate one stage under the four apples × textures settings.
    Ablate(AblateArgs),
    /// Saliency maps, top-down renderings and plots from earlier runs.
    Analyze(AnalyzeArgs),
    /// Uniform-random agent on a stage or a two-arm probe map.
    Baseline(BaselineArgs),
    /// Gradient checks and oracle comparisons; nonzero exit on failure.
    Selftest(SelftestArgs),
}

#[derive(Args, Debug)]
pub struct GenMapsArgs {
    /// Seed for this run; required so results are reproducible.
    #[arg(long, env = "NAVBENCH_SEED")]
    pub seed: u64,
    /// Number of training maps.
    #[arg(long, env = "NAVBENCH_TRAIN")]
    pub train: Option<usize>,
    /// Number of held-out test maps.
    #[arg(long, env = "NAVBENCH_TEST")]
    pub test: Option<usize>,
    /// Maze width in cells.
    #[arg(long, env = "NAVBENCH_COLS")]
    pub cols: Option<usize>,
    /// Maze height in cells.
    #[arg(long, env = "NAVBENCH_ROWS")]
    pub rows: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long, env = "NAVBENCH_OUT")]
    pub out: PathBuf,
}

/// Where the map pool comes from.
#[derive(Args, Debug, Clone)]
pub struct PoolArgs {
    /// Directory written by `gen-maps`; defaults to generating from `[pool]`.
    #[arg(long, env = "NAVBENCH_POOL")]
    pub pool: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training seed (parameter init and every worker stream).
    #[arg(long, env = "NAVBENCH_SEED")]
    pub seed: u64,
    /// Benchmark stage, 1 to 5.
    #[arg(long, env = "NAVBENCH_STAGE", default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub stage: u8,
    /// Output directory (created if missing).
    #[arg(long, env = "NAVBENCH_OUT")]
    pub out: PathBuf,
    #[command(flatten)]
    pub pool: PoolArgs,
    /// Map id for static-map stages (default: first of the static subset).
    #[arg(long, env = "NAVBENCH_TRAIN_MAP")]
    pub train_map: Option<usize>,
    /// Stage 5: train on the first N training maps only.
    #[arg(long, env = "NAVBENCH_SUBSET")]
    pub subset: Option<usize>,
    /// Environment-step budget.
    #[arg(long, env = "NAVBENCH_STEPS")]
    pub steps: Option<u64>,
    /// Training worker threads. Only single-worker runs are bit-reproducible.
    #[arg(long, env = "NAVBENCH_WORKERS")]
    pub workers: Option<usize>,
    /// Adam learning rate.
    #[arg(long, env = "NAVBENCH_LR")]
    pub lr: Option<f64>,
    /// Write a checkpoint every N environment steps.
    #[arg(long, env = "NAVBENCH_CHECKPOINT_EVERY")]
    pub checkpoint_every: Option<u64>,
    /// Start from this checkpoint instead of a fresh initialisation.
    #[arg(long, env = "NAVBENCH_INIT")]
    pub init: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Sampled,
    Greedy,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum VariantArg {
    Seen,
    Unseen,
}

/// Evaluation knobs shared by eval, bench, ablate and baseline.
#[derive(Args, Debug, Clone)]
pub struct EvalKnobs {
    /// Episodes per evaluated map.
    #[arg(long, env = "NAVBENCH_EPISODES")]
    pub episodes: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "NAVBENCH_WORKERS")]
    pub workers: Option<usize>,
    /// Action selection during evaluation.
    #[arg(long, value_enum, env = "NAVBENCH_MODE")]
    pub mode: Option<ModeArg>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Evaluation seed; every episode seed derives from it.
    #[arg(long, env = "NAVBENCH_SEED", required_unless_present = "replay")]
    pub seed: Option<u64>,
    /// Benchmark stage, 1 to 5.
    #[arg(long, env = "NAVBENCH_STAGE", default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub stage: u8,
    /// Checkpoint file written by `train`.
    #[arg(long, env = "NAVBENCH_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, env = "NAVBENCH_OUT")]
    pub out: PathBuf,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[command(flatten)]
    pub knobs: EvalKnobs,
    /// Evaluate on the static subset (seen) or the held-out test maps (unseen).
    #[arg(long, value_enum, env = "NAVBENCH_VARIANT")]
    pub variant: Option<VariantArg>,
    /// Remove apples from every episode.
    #[arg(long)]
    pub no_apples: bool,
    /// Use texture 0 on every wall instead of random textures.
    #[arg(long)]
    pub fixed_textures: bool,
    /// Re-run the evaluation recorded in this manifest. Its sibling
    /// config.toml is used unless --config is given.
    #[arg(long, env = "NAVBENCH_REPLAY", conflicts_with_all = ["seed", "variant", "no_apples", "fixed_textures"])]
    pub replay: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Seed for this run; required so results are reproducible.
    #[arg(long, env = "NAVBENCH_SEED")]
    pub seed: u64,
    /// Checkpoint used for every stage without a --stage-checkpoint.
    #[arg(long, env = "NAVBENCH_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Per-stage checkpoint, e.g. `--stage-checkpoint 3=runs/s3/final.bin`.
    #[arg(long, value_name = "STAGE=PATH")]
    pub stage_checkpoint: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long, env = "NAVBENCH_OUT")]
    pub out: PathBuf,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[command(flatten)]
    pub knobs: EvalKnobs,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Seed for this run; required so results are reproducible.
    #[arg(long, env = "NAVBENCH_SEED")]
    pub seed: u64,
    /// Benchmark stage, 1 to 5.
    #[arg(long, env = "NAVBENCH_STAGE", default_value_t = 5, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub stage: u8,
    /// Checkpoint file written by `train`.
    #[arg(long, env = "NAVBENCH_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, env = "NAVBENCH_OUT")]
    pub out: PathBuf,
    /// Evaluate on the static subset (seen) or the held-out test maps (unseen).
    #[arg(long, value_enum, env = "NAVBENCH_VARIANT")]
    pub variant: Option<VariantArg>,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[command(flatten)]
    pub knobs: EvalKnobs,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ProbeArg {
    Square,
    Goal,
}

#[derive(Args, Debug)]
pub struct BaselineArgs {
    /// Seed for this run; required so results are reproducible.
    #[arg(long, env = "NAVBENCH_SEED")]
    pub seed: u64,
    /// Benchmark stage, 1 to 5.
    #[arg(long, env = "NAVBENCH_STAGE", default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=5))]
    pub stage: u8,
    /// Output directory (created if missing).
    #[arg(long, env = "NAVBENCH_OUT")]
    pub out: PathBuf,
    /// Evaluate on the static subset (seen) or the held-out test maps (unseen).
    #[arg(long, value_enum, env = "NAVBENCH_VARIANT")]
    pub variant: Option<VariantArg>,
    /// Also measure the shorter-path fraction on a two-arm probe map.
    #[arg(long, value_enum)]
    pub probe: Option<ProbeArg>,
    /// Episodes on the probe map.
    #[arg(long, default_value_t = 100)]
    pub probe_episodes: usize,
    #[command(flatten)]
    pub pool: PoolArgs,
    #[command(flatten)]
    pub knobs: EvalKnobs,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    pub what: AnalyzeCommand,
}

#[derive(Subcommand, Debug)]
pub enum AnalyzeCommand {
    /// Gradient saliency masks for one logged episode.
    Saliency {
        /// Evaluation output directory (holds manifest.toml and config.toml).
        #[arg(long)]
        run: PathBuf,
        /// Log file, relative to the run directory.
        #[arg(long)]
        log: PathBuf,
        /// Checkpoint file written by `train`.
        #[arg(long, env = "NAVBENCH_CHECKPOINT")]
        checkpoint: PathBuf,
        #[command(flatten)]
        pool: PoolArgs,
        /// Output directory (created if missing).
        #[arg(long, env = "NAVBENCH_OUT")]
        out: PathBuf,
        /// Export images for every K-th frame (0: none).
        #[arg(long, default_value_t = 50)]
        frames_every: usize,
    },
    /// Top-down rendering of a logged trajectory as a PPM image.
    Topdown {
        /// Evaluation output directory (holds manifest.toml and config.toml).
        #[arg(long)]
        run: PathBuf,
        /// Log file, relative to the run directory.
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        pool: PoolArgs,
        /// First record to draw.
        #[arg(long, default_value_t = 0)]
        from: usize,
        /// One past the last record to draw (default: end of episode).
        #[arg(long)]
        to: Option<usize>,
        /// Pixels per maze block.
        #[arg(long, default_value_t = 24)]
        px: usize,
        /// Output directory (created if missing).
        #[arg(long, env = "NAVBENCH_OUT")]
        out: PathBuf,
    },
    /// SVG plots from training CSVs and benchmark summaries.
    Plot {
        /// Training CSV, optionally `LABEL=PATH`; repeat to overlay runs.
        #[arg(long)]
        training: Vec<String>,
        /// Benchmark summary CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Summary metrics to plot as bars.
        #[arg(long, default_values_t = ["latency".to_string(), "dist_ineff_bfs".to_string(), "reward".to_string()])]
        metric: Vec<String>,
        /// Output directory (created if missing).
        #[arg(long, env = "NAVBENCH_OUT")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    /// Fewer seeds and poses; a smoke run.
    #[arg(long)]
    pub quick: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("NAVBENCH_LOG", level)).format_timestamp_secs().init();
    match commands::run(cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
