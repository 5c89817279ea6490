//! `prefcurate` command line.
//!
//! Every subcommand works on one run directory (`--run-dir`, alias `--out`).
//! Settings come from built-in defaults, then a flat TOML file given with
//! `--config`, then flags. Judge and embedding endpoints and the service
//! token are read from the environment only.
//!
//! Exit status is 0 on success, 1 for user errors (bad flags, bad input,
//! config digest mismatch, a locked run directory, a pool that is not ready)
//! and 2 for internal failures.
//!
//! Every flag documents its default:
//!
//! ```
//! use clap::CommandFactory;
//! let cmd = prefcurate_cli::Cli::command();
//! for sub in cmd.get_subcommands() {
//!     for arg in sub.get_arguments() {
//!         if matches!(arg.get_id().as_str(), "help" | "version") {
//!             continue;
//!         }
//!         let help = arg.get_help().map(|h| h.to_string()).unwrap_or_default();
//!         let has_default = !arg.get_default_values().is_empty() || help.contains("[default");
//!         assert!(has_default, "{} --{}", sub.get_name(), arg.get_id());
//!     }
//! }
//! ```

mod config;
mod context;
mod error;
mod inspect;
mod pipeline;
mod service;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, StoredConfig, RUN_CONTROL_KEYS};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "prefcurate", version, about = "Preference-data curation pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Run directory all artifacts are read from and written to
    #[arg(long, global = true, visible_alias = "out", default_value = "run")]
    pub run_dir: PathBuf,
    /// Flat TOML config file [default: none, built-in defaults apply]
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overrides the config key `seed` [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the plan and exit without touching the run directory [default: off]
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate, deduplicate and (optionally) decontaminate raw records into the pair store
    Ingest(IngestArgs),
    /// Remove pairs whose prompts overlap a benchmark, before curation starts
    Decontaminate(DecontaminateArgs),
    /// Embed every pair that has no embeddings yet
    Embed(EmbedArgs),
    /// Train a reward model on the current training pools
    Train(TrainArgs),
    /// Run Stage-1 iterations (train, retrieve, label) up to a target count
    Stage1(Stage1Args),
    /// Sweep the unverified pool: confidence filter, re-annotation, consistency
    Stage2(Stage2Args),
    /// Flip discarded pairs into the recycled shard
    Recycle,
    /// Score a checkpoint on a pairwise / best-of-N eval file
    Eval(EvalArgs),
    /// Serve the human verification queue over HTTP
    Serve(ServeArgs),
    /// Summarize pools, iterations and the latest stage reports
    Report,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// Raw JSONL records [default: none, required]
    #[arg(long = "in", required = true)]
    pub input: PathBuf,
    /// Directory of benchmark JSONL files to decontaminate against [default: none, skip]
    #[arg(long)]
    pub benchmarks: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DecontaminateArgs {
    /// Directory of benchmark JSONL files [default: none, required]
    #[arg(long, required = true)]
    pub benchmarks: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    /// Embedding dimension, overrides `embed_dim` [default: 256]
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Checkpoint name under checkpoints/
    #[arg(long, default_value = "model")]
    pub name: String,
    /// Train on the recycled shard too, on top of `include_recycled` [default: off]
    #[arg(long)]
    pub include_recycled: bool,
    /// Epochs for this checkpoint only, instead of `epochs` [default: 5]
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct Stage1Args {
    /// Iteration count to reach; finished iterations are not repeated, 0 only verifies the seed pool [default: 3]
    #[arg(long)]
    pub iterations: Option<u32>,
    /// Use offline stub judges and stub humans [default: off]
    #[arg(long)]
    pub stub_judges: bool,
    /// Queue the human slice for `serve` even with stub judges [default: off]
    #[arg(long)]
    pub queue_humans: bool,
    /// Human share of each annotation queue, overrides `human_ratio` [default: 0.1]
    #[arg(long)]
    pub human_ratio: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct Stage2Args {
    /// Judge-label the low-confidence side (the default) [default: on]
    #[arg(long, conflicts_with = "no_judges")]
    pub with_judges: bool,
    /// Skip judges; consistency uses the best-model arm only [default: off]
    #[arg(long)]
    pub no_judges: bool,
    /// Use offline stub judges [default: off]
    #[arg(long)]
    pub stub_judges: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Checkpoint file, or the name of one under checkpoints/ [default: none, required]
    #[arg(long, required = true)]
    pub model: String,
    /// Eval JSONL file [default: none, required]
    #[arg(long, required = true)]
    pub set: PathBuf,
    /// Also write the best-of-N curve table [default: off]
    #[arg(long)]
    pub emit_curves: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Listen address, overrides `bind` [default: 127.0.0.1:8080]
    #[arg(long)]
    pub bind: Option<String>,
}

/// Parses `argv` and runs the command.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(cli.global.config.as_deref())?;
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    let g = &cli.global;
    match cli.command {
        Command::Ingest(a) => pipeline::ingest(g, cfg, &a),
        Command::Decontaminate(a) => pipeline::decontaminate(g, cfg, &a),
        Command::Embed(a) => {
            if let Some(d) = a.dim {
                cfg.embed_dim = d;
            }
            pipeline::embed(g, cfg)
        }
        Command::Train(a) => pipeline::train(g, cfg, &a),
        Command::Stage1(a) => {
            if let Some(n) = a.iterations {
                cfg.iterations = n;
            }
            if let Some(r) = a.human_ratio {
                cfg.human_ratio = r;
            }
            cfg.stub_judges |= a.stub_judges;
            cfg.queue_humans |= a.queue_humans;
            pipeline::stage1(g, cfg)
        }
        Command::Stage2(a) => {
            cfg.stub_judges |= a.stub_judges;
            pipeline::stage2(g, cfg, !a.no_judges)
        }
        Command::Recycle => pipeline::recycle(g, cfg),
        Command::Eval(a) => inspect::eval(g, cfg, &a),
        Command::Serve(a) => {
            if let Some(b) = a.bind {
                cfg.bind = b;
            }
            service::serve(g, cfg)
        }
        Command::Report => inspect::report(g, cfg),
    }
}
