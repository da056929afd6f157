use std::fs;
use std::path::{Path, PathBuf};

use perex::frontier::PlannerMode;
use perex::sim::{feature_heatmap, run_episode, EpisodeMetrics, Heatmap, Termination, TextureLevel, ThresholdOutcome, WallClock};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::csv::{write_frames, write_heatmap};
use crate::{CliError, Result};

/// Normalized-progress bins of the tracked-count curve.
pub const PROGRESS_BINS: usize = 20;

pub struct RunSpec {
    pub config: RunConfig,
    pub modes: Vec<PlannerMode>,
    pub texture: TextureLevel,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub final_exploration_rate: f64,
    pub max_drift: f64,
    pub sim_time: f64,
    pub termination: Termination,
    pub replans: usize,
    pub failed_cycles: usize,
    pub yaw_dilations: usize,
    pub distance_travelled: f64,
    pub frames: usize,
    pub mean_tracked_count: f64,
    pub mean_tracked_quality: f64,
    /// Mean tracked count over the first half of normalized progress.
    pub early_tracked_count: f64,
    pub thresholds: Vec<ThresholdOutcome>,
    pub tracked_curve: Vec<f64>,
    /// Raw (unnormalized) track-frame counts.
    pub heatmap: Heatmap,
    pub wall_clock: WallClock,
}

/// Contents of `episode_<seed>_<mode>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub schema_version: u32,
    pub seed: u64,
    pub mode: PlannerMode,
    pub texture: TextureLevel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<EpisodeSummary>,
}

/// Mean tracked count per normalized-progress bin; empty bins repeat the previous value.
pub fn tracked_curve(m: &EpisodeMetrics, bins: usize) -> Vec<f64> {
    let mut sums = vec![(0.0, 0usize); bins];
    for (f, p) in m.frames.iter().zip(m.normalized_progress()) {
        let b = ((p * bins as f64).floor() as usize).min(bins - 1);
        sums[b].0 += f.tracked.len() as f64;
        sums[b].1 += 1;
    }
    let mut last = 0.0;
    sums.into_iter()
        .map(|(s, n)| {
            if n > 0 {
                last = s / n as f64;
            }
            last
        })
        .collect()
}

pub fn summarize(m: &EpisodeMetrics, heatmap_bins: usize, cam: &perex::world::CameraModel) -> EpisodeSummary {
    EpisodeSummary {
        final_exploration_rate: m.final_exploration_rate,
        max_drift: m.max_drift,
        sim_time: m.sim_time,
        termination: m.termination,
        replans: m.replans,
        failed_cycles: m.failed_cycles,
        yaw_dilations: m.yaw_dilations,
        distance_travelled: m.distance_travelled,
        frames: m.frames.len(),
        mean_tracked_count: m.mean_tracked_count(),
        mean_tracked_quality: m.mean_tracked_quality(),
        early_tracked_count: m.mean_tracked_until(0.5),
        thresholds: m.thresholds.clone(),
        tracked_curve: tracked_curve(m, PROGRESS_BINS),
        heatmap: feature_heatmap(m, cam, (heatmap_bins, heatmap_bins)),
        wall_clock: m.wall_clock,
    }
}

pub fn episode_stem(seed: u64, mode: PlannerMode) -> String {
    format!("{seed}_{mode}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Json { path: path.to_path_buf(), source: e })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation (zeros when empty).
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub success: Vec<bool>,
    pub coverage: Vec<f64>,
    pub final_exploration_rate: f64,
    pub max_drift: f64,
    pub mean_tracked_quality: f64,
    pub early_tracked_count: f64,
    pub heatmap_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: PlannerMode,
    pub episodes: usize,
    pub errors: Vec<u64>,
    /// Per threshold, over successful episodes.
    pub success: Vec<Stat>,
    pub coverage: Vec<Stat>,
    pub final_exploration_rate: Stat,
    pub sim_time: Stat,
    pub mean_tracked_count: Stat,
    pub mean_tracked_quality: Stat,
    pub early_tracked_count: Stat,
    pub heatmap_mass: Stat,
    pub tracked_curve: Vec<Stat>,
    pub seeds: Vec<SeedRow>,
}

/// Contents of `summary.json`. Holds no wall-clock data, so identical runs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub texture: TextureLevel,
    pub seeds: Vec<u64>,
    pub thresholds: Vec<f64>,
    pub progress_bins: usize,
    pub modes: Vec<ModeSummary>,
}

impl Summary {
    pub fn mode(&self, mode: PlannerMode) -> Option<&ModeSummary> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

fn mode_summary(mode: PlannerMode, records: &[&EpisodeRecord]) -> ModeSummary {
    let mut ok: Vec<(u64, &EpisodeSummary)> = records.iter().filter_map(|r| r.summary.as_ref().map(|s| (r.seed, s))).collect();
    ok.sort_by_key(|(seed, _)| *seed);
    let mut errors: Vec<u64> = records.iter().filter(|r| r.summary.is_none()).map(|r| r.seed).collect();
    errors.sort_unstable();
    let thresholds = ok.first().map_or(0, |(_, s)| s.thresholds.len());
    let col = |f: &dyn Fn(&EpisodeSummary) -> f64| Stat::of(&ok.iter().map(|(_, s)| f(s)).collect::<Vec<_>>());
    let mass = |s: &EpisodeSummary| s.heatmap.frame_averaged_mass();
    ModeSummary {
        mode,
        episodes: records.len(),
        errors,
        success: (0..thresholds).map(|i| col(&|s| s.thresholds[i].success as u8 as f64)).collect(),
        coverage: (0..thresholds).map(|i| col(&|s| s.thresholds[i].coverage)).collect(),
        final_exploration_rate: col(&|s| s.final_exploration_rate),
        sim_time: col(&|s| s.sim_time),
        mean_tracked_count: col(&|s| s.mean_tracked_count),
        mean_tracked_quality: col(&|s| s.mean_tracked_quality),
        early_tracked_count: col(&|s| s.early_tracked_count),
        heatmap_mass: col(&mass),
        tracked_curve: (0..PROGRESS_BINS).map(|b| col(&|s| s.tracked_curve[b])).collect(),
        seeds: ok
            .iter()
            .map(|(seed, s)| SeedRow {
                seed: *seed,
                success: s.thresholds.iter().map(|t| t.success).collect(),
                coverage: s.thresholds.iter().map(|t| t.coverage).collect(),
                final_exploration_rate: s.final_exploration_rate,
                max_drift: s.max_drift,
                mean_tracked_quality: s.mean_tracked_quality,
                early_tracked_count: s.early_tracked_count,
                heatmap_mass: mass(s),
            })
            .collect(),
    }
}

/// Aggregate episode records. The result does not depend on record order.
pub fn aggregate(texture: TextureLevel, seeds: &[u64], thresholds: &[f64], records: &[EpisodeRecord]) -> Summary {
    let mut seeds = seeds.to_vec();
    seeds.sort_unstable();
    let mut modes: Vec<PlannerMode> = records.iter().map(|r| r.mode).collect();
    modes.sort_unstable();
    modes.dedup();
    Summary {
        schema_version: SCHEMA_VERSION,
        texture,
        seeds,
        thresholds: thresholds.to_vec(),
        progress_bins: PROGRESS_BINS,
        modes: modes
            .into_iter()
            .map(|m| mode_summary(m, &records.iter().filter(|r| r.mode == m).collect::<Vec<_>>()))
            .collect(),
    }
}

pub struct BatchOutcome {
    pub summary: Summary,
    pub records: Vec<EpisodeRecord>,
}

impl BatchOutcome {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

fn run_one(spec: &RunSpec, world: Option<&perex::world::WorldSpec>, seed: u64, mode: PlannerMode) -> Result<EpisodeRecord> {
    let cfg = spec.config.episode_config(world, spec.texture, seed, mode);
    let stem = episode_stem(seed, mode);
    let mut record = EpisodeRecord { schema_version: SCHEMA_VERSION, seed, mode, texture: spec.texture, error: None, summary: None };
    match run_episode(&cfg) {
        Ok(m) => {
            let summary = summarize(&m, cfg.sim.heatmap_bins, &cfg.camera);
            write_frames(&spec.out.join(format!("frames_{stem}.csv")), &m)?;
            write_heatmap(&spec.out.join(format!("heatmap_{stem}.csv")), &summary.heatmap)?;
            record.summary = Some(summary);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    write_json(&spec.out.join(format!("episode_{stem}.json")), &record)?;
    Ok(record)
}

/// Run every (mode, seed) episode, write the per-episode artifacts and `summary.json`.
/// Episode failures are recorded, not returned; I/O failures abort.
pub fn run_batch(spec: &RunSpec) -> Result<BatchOutcome> {
    if spec.seeds.is_empty() || spec.modes.is_empty() {
        return Err(CliError::Usage("nothing to run: empty seed or mode list".into()));
    }
    spec.config.validate()?;
    fs::create_dir_all(&spec.out).map_err(|e| CliError::io(&spec.out, e))?;
    let world = spec.config.load_world()?;
    let jobs: Vec<(PlannerMode, u64)> = spec.modes.iter().flat_map(|m| spec.seeds.iter().map(move |s| (*m, *s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
    let records: Vec<EpisodeRecord> =
        pool.install(|| jobs.par_iter().map(|(m, s)| run_one(spec, world.as_ref(), *s, *m)).collect::<Result<_>>())?;
    let summary = aggregate(spec.texture, &spec.seeds, &spec.config.sim.thresholds, &records);
    write_json(&spec.out.join("summary.json"), &summary)?;
    Ok(BatchOutcome { summary, records })
}
