//! `dtn` command-line front end.
//!
//! Configuration precedence, lowest to highest: built-in defaults, the
//! `--config` file, `--set key=value` pairs in order, dedicated flags.
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dtn_core::config::RunConfig;

const AFTER_HELP: &str = "Configuration precedence (later wins): defaults, --config file, \
--set key=value in order, dedicated flags. Config files hold one key=value per line; \
'#' starts a comment. Run `dtn keys` to list every key.";

#[derive(Debug, Parser)]
#[command(name = "dtn", version, about = "Few-shot learning with diversity-transfer feature generation", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write metrics, schedule, config and checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on test episodes.
    Eval(EvalArgs),
    /// Run a strategy or generation sweep over several seeds.
    Ablate(AblateArgs),
    /// Write the synthetic dataset as an embedding file.
    GenData(GenDataArgs),
    /// Write real, support and generated features of one test episode.
    ExportEmbeddings(ExportArgs),
    /// List every configuration key with its default value.
    Keys,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// key=value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Set any configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// oat, at, naive or two-stage
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    n_way: Option<usize>,
    #[arg(long)]
    k_shot: Option<usize>,
    /// Queries per class
    #[arg(long)]
    queries: Option<usize>,
    /// Reference pairs (generated features per support item)
    #[arg(long)]
    h_gen: Option<usize>,
    /// Evaluation episodes
    #[arg(long)]
    episodes: Option<usize>,
    /// Length of at, naive and two-stage schedules
    #[arg(long)]
    epochs: Option<usize>,
    /// Embedding file (synthetic data when absent)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Evaluation threads
    #[arg(long)]
    workers: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("schedule", self.schedule.clone());
        push("n_way", self.n_way.map(|v| v.to_string()));
        push("k_shot", self.k_shot.map(|v| v.to_string()));
        push("queries", self.queries.map(|v| v.to_string()));
        push("h_gen", self.h_gen.map(|v| v.to_string()));
        push("episodes", self.episodes.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("data", self.data.as_ref().map(|p| p.display().to_string()));
        push("workers", self.workers.map(|v| v.to_string()));
        out
    }

    /// Applies the config file, `--set` pairs and flags on top of `base`.
    fn apply(&self, mut cfg: RunConfig) -> commands::Result<RunConfig> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| commands::config_error(format!("cannot read config {}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        for pair in &self.set {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| commands::config_error(format!("--set expects KEY=VALUE, got {pair:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Continue from a checkpoint; its stored configuration and schedule are used
    #[arg(long, conflicts_with = "config")]
    resume: Option<PathBuf>,
    /// Stop before this epoch index (the checkpoint can be resumed later)
    #[arg(long)]
    stop_before: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for the per-episode CSV
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// strategy (naive, two-stage, at, oat) or h (0, 2, 4, 16, 32, 64)
    #[arg(long, default_value = "strategy")]
    sweep: String,
    /// Seeds: comma-separated values or inclusive ranges, e.g. 1-5
    #[arg(long, default_value = "1-5")]
    seeds: String,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output embedding file
    #[arg(long, default_value = "synthetic.txt")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output CSV file
    #[arg(long, default_value = "embeddings.csv")]
    out: PathBuf,
}

fn dispatch(cli: Cli) -> commands::Result<()> {
    match cli.command {
        Command::Train(a) => match &a.resume {
            Some(ckpt) => commands::resume(ckpt, &a.out, a.run.workers, a.stop_before),
            None => commands::train(&a.run.apply(RunConfig::default())?, &a.out, a.stop_before),
        },
        Command::Eval(a) => commands::eval(&a.checkpoint, &a.run, &a.out),
        Command::Ablate(a) => {
            let cfg = a.run.apply(RunConfig::default())?;
            commands::ablate(&cfg, &a.sweep, &a.seeds, &a.out)
        }
        Command::GenData(a) => commands::gen_data(&a.run.apply(RunConfig::default())?, &a.out),
        Command::ExportEmbeddings(a) => commands::export(&a.checkpoint, &a.run, &a.out),
        Command::Keys => {
            commands::keys();
            Ok(())
        }
    }
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
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
