use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perex::sim::TextureLevel;
use perex_cli::{compare_dirs, heatmap_from_episode, parse_config, parse_modes, parse_seeds, run_batch, CliError, RunConfig, RunSpec};

#[derive(Parser)]
#[command(name = "perex", version, about = "Perception-aware exploration simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of episodes and write per-episode artifacts plus summary.json.
    Run {
        /// JSON config; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Planner mode, comma-separated list, or `all`.
        #[arg(long, default_value = "all")]
        mode: String,
        #[arg(long, default_value = "medium")]
        texture: TextureLevel,
        /// `a..b` (inclusive) or comma-separated list.
        #[arg(long, default_value = "1..10")]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare summaries of several run directories and write comparison.csv.
    Compare {
        #[arg(long = "in", num_args = 1.., required = true)]
        dirs: Vec<PathBuf>,
        /// Output directory (default: the first input directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the heatmap CSV from an episode JSON.
    Heatmap {
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default config document.
    Defaults,
}

fn run(cli: Cli) -> perex_cli::Result<()> {
    match cli.command {
        Command::Run { config, mode, texture, seeds, out, jobs } => {
            let config = match config {
                Some(path) => parse_config(&path)?,
                None => RunConfig::default(),
            };
            let spec = RunSpec { config, modes: parse_modes(&mode)?, texture, seeds: parse_seeds(&seeds)?, out, jobs };
            let outcome = run_batch(&spec)?;
            for r in outcome.records.iter().filter(|r| r.error.is_some()) {
                eprintln!("episode {} {}: {}", r.seed, r.mode, r.error.as_deref().unwrap_or_default());
            }
            println!("wrote {}", spec.out.join("summary.json").display());
            match outcome.failed() {
                0 => Ok(()),
                failed => Err(CliError::EpisodesFailed { failed, total: outcome.records.len() }),
            }
        }
        Command::Compare { dirs, out } => {
            let (path, _) = compare_dirs(&dirs, out.as_deref())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Heatmap { episode, out } => {
            let path = heatmap_from_episode(&episode, out.as_deref())?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Defaults => {
            let text = serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes");
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
