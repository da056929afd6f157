//! Batch runner and artifact writer for the `perex` exploration simulator.

use std::path::{Path, PathBuf};

pub mod batch;
pub mod compare;
pub mod config;
pub mod csv;

pub use batch::{aggregate, run_batch, BatchOutcome, EpisodeRecord, EpisodeSummary, RunSpec, Stat, Summary};
pub use compare::{compare_dirs, compare_modes, ComparisonRow};
pub use config::{parse_config, parse_config_str, parse_modes, parse_seeds, RunConfig, SCHEMA_VERSION};
pub use csv::format_sig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },

    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] perex::Error),

    #[error("{failed} of {total} episodes failed")]
    EpisodesFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Rebuild the normalized heatmap CSV of an episode JSON. Writes next to the
/// episode file unless `out` is given; returns the written path.
pub fn heatmap_from_episode(episode: &Path, out: Option<&Path>) -> Result<PathBuf> {
    let record: EpisodeRecord = config::read_json(episode)?;
    let summary = record.summary.ok_or_else(|| {
        CliError::Usage(format!("{}: episode failed ({})", episode.display(), record.error.unwrap_or_default()))
    })?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => episode
            .with_file_name(format!("heatmap_{}.csv", batch::episode_stem(record.seed, record.mode))),
    };
    csv::write_heatmap(&path, &summary.heatmap)?;
    Ok(path)
}
