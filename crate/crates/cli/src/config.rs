use std::path::{Path, PathBuf};

use perex::frontier::{PlannerMode, PlannerParams};
use perex::sim::{EpisodeConfig, SimParams, TextureLevel, WorldSource};
use perex::traj_position::CorridorParams;
use perex::world::{CameraModel, WorldSpec};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Run configuration file. Every section is optional and falls back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// World description used instead of the procedural generator, relative
    /// to the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub world_file: Option<PathBuf>,
    pub planner: PlannerParams,
    pub corridor: CorridorParams,
    pub camera: CameraModel,
    pub sim: SimParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            world_file: None,
            planner: PlannerParams::default(),
            corridor: CorridorParams::default(),
            camera: CameraModel::default(),
            sim: SimParams::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            )));
        }
        let check = |section: &str, r: perex::Result<()>| r.map_err(|e| CliError::Config(format!("{section}: {e}")));
        check("planner", self.planner.validate())?;
        check("corridor", self.corridor.validate())?;
        check("camera", self.camera.validate())?;
        check("sim", self.sim.validate())
    }

    pub fn load_world(&self) -> Result<Option<WorldSpec>> {
        self.world_file.as_deref().map(read_json).transpose()
    }

    pub fn episode_config(&self, world: Option<&WorldSpec>, texture: TextureLevel, seed: u64, mode: PlannerMode) -> EpisodeConfig {
        EpisodeConfig {
            world: match world {
                Some(spec) => WorldSource::Spec(spec.clone()),
                None => WorldSource::Procedural { texture, seed },
            },
            seed,
            planner: PlannerParams { mode, ..self.planner.clone() },
            corridor: self.corridor.clone(),
            camera: self.camera,
            sim: self.sim.clone(),
        }
    }
}

/// Parse and validate a config document. A relative `world_file` is resolved against `base`.
pub fn parse_config_str(text: &str, base: Option<&Path>) -> Result<RunConfig> {
    let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    if let (Some(base), Some(w)) = (base, cfg.world_file.as_mut()) {
        if w.is_relative() {
            *w = base.join(&*w);
        }
    }
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config_str(&text, path.parent()).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Json { path: path.to_path_buf(), source: e })
}

/// `a..b` (inclusive), a single seed, or a comma-separated list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || CliError::Usage(format!("invalid seed list `{s}`"));
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    let mut sorted = seeds.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(CliError::Usage(format!("seeds must be distinct: `{s}`")));
    }
    Ok(seeds)
}

/// `all` or a comma-separated list, returned in canonical order.
pub fn parse_modes(s: &str) -> Result<Vec<PlannerMode>> {
    if s == "all" {
        return Ok(PlannerMode::ALL.to_vec());
    }
    let mut modes = s.split(',').map(|m| m.trim().parse::<PlannerMode>()).collect::<perex::Result<Vec<_>>>()?;
    modes.sort_unstable();
    modes.dedup();
    Ok(modes)
}
