//! Deterministic exploration episodes.
//!
//! Worlds are generated from a seed and a texture level. The vehicle tracks its
//! planned trajectories perfectly; a synthetic tracker keeps features that are
//! covisible between consecutive frames and not blurred by excess relative
//! angular rate, and a random-walk drift model grows faster when the tracked
//! quality is low. Drift is bookkept alongside the true pose and never feeds
//! back into mapping or planning.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::frontier::{detect_frontiers, sample_viewpoints, select_best, split_clusters, PlannerParams};
use crate::traj_position::{plan_trajectory, BoundaryState, CorridorParams, PositionTrajectory};
use crate::traj_yaw::{desired_yaw_rate, plan_yaw, YawPlanInput, YawTrajectory};
use crate::world::{
    exploration_rate, intersect_sorted, observe, Aabb, CameraModel, CellState, FeatureId, FeatureMap, FeatureRecord,
    GroundTruthWorld, Viewpoint, VoxelGrid, VoxelIndex, WorldSpec,
};
use crate::{wrap_angle, Error, Result, Vec3};

const DRIFT_STREAM: u64 = 0x5EED_D81F_7000_0001;
const FEATURE_STREAM: u64 = 0x5EED_FEA7_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureLevel {
    Low,
    Medium,
    High,
}

impl TextureLevel {
    pub const ALL: [TextureLevel; 3] = [TextureLevel::Low, TextureLevel::Medium, TextureLevel::High];

    pub fn as_str(&self) -> &'static str {
        match self {
            TextureLevel::Low => "low",
            TextureLevel::Medium => "medium",
            TextureLevel::High => "high",
        }
    }

    /// Features per square metre of surface and the score range.
    pub fn density_and_scores(&self) -> (f64, f64, f64) {
        match self {
            TextureLevel::Low => (0.5, 0.05, 0.3),
            TextureLevel::Medium => (2.0, 0.2, 0.7),
            TextureLevel::High => (6.0, 0.5, 1.0),
        }
    }
}

impl std::fmt::Display for TextureLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TextureLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TextureLevel::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown texture level `{s}`")))
    }
}

/// Vertical face of a box, as `(fixed axis, fixed value, inward sign, other-axis range)`.
struct Face {
    axis: usize,
    value: f64,
    inward: f64,
    span: (f64, f64),
}

fn box_faces(b: &Aabb) -> [Face; 4] {
    [
        Face { axis: 0, value: b.min.x, inward: 1.0, span: (b.min.y, b.max.y) },
        Face { axis: 0, value: b.max.x, inward: -1.0, span: (b.min.y, b.max.y) },
        Face { axis: 1, value: b.min.y, inward: 1.0, span: (b.min.x, b.max.x) },
        Face { axis: 1, value: b.max.y, inward: -1.0, span: (b.min.x, b.max.x) },
    ]
}

/// 10 m × 10 m × 2 m arena with 6–10 full-height box obstacles and features on
/// obstacle faces and walls. Geometry depends only on `seed`; features depend
/// on `(level, seed)`.
pub fn generate_world(level: TextureLevel, seed: u64) -> Result<GroundTruthWorld> {
    const RES: f64 = 0.1;
    const GAP: i64 = 8;
    let inner_lo = 1i64;
    let inner_hi = 99i64;
    let start = Vec3::new(1.0, 1.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rng.random_range(6..=10usize);
    let mut cells: Vec<[i64; 4]> = Vec::new();
    let mut attempts = 0;
    while cells.len() < target && attempts < 2000 {
        attempts += 1;
        let w = rng.random_range(4..=14i64);
        let d = rng.random_range(4..=14i64);
        let x0 = rng.random_range(inner_lo + GAP..=inner_hi - GAP - w);
        let y0 = rng.random_range(inner_lo + GAP..=inner_hi - GAP - d);
        let cand = [x0, y0, x0 + w, y0 + d];
        let clear_start = {
            let sx = (start.x / RES) as i64;
            let sy = (start.y / RES) as i64;
            sx < cand[0] - 10 || sx > cand[2] + 10 || sy < cand[1] - 10 || sy > cand[3] + 10
        };
        let separated = cells.iter().all(|o| {
            cand[0] >= o[2] + GAP || o[0] >= cand[2] + GAP || cand[1] >= o[3] + GAP || o[1] >= cand[3] + GAP
        });
        if clear_start && separated {
            cells.push(cand);
        }
    }
    let obstacles: Vec<Aabb> = cells
        .iter()
        .map(|c| {
            Aabb::new(Vec3::new(c[0] as f64 * RES, c[1] as f64 * RES, 0.0), Vec3::new(c[2] as f64 * RES, c[3] as f64 * RES, 2.0))
        })
        .collect();

    let (density, lo, hi) = level.density_and_scores();
    let mut frng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ FEATURE_STREAM ^ level as u64);
    let (z_lo, z_hi) = (0.1, 1.9);
    let inner = Aabb::new(Vec3::new(0.1, 0.1, 0.0), Vec3::new(9.9, 9.9, 2.0));
    let walls = [
        Face { axis: 0, value: inner.min.x, inward: -1.0, span: (0.1, 9.9) },
        Face { axis: 0, value: inner.max.x, inward: 1.0, span: (0.1, 9.9) },
        Face { axis: 1, value: inner.min.y, inward: -1.0, span: (0.1, 9.9) },
        Face { axis: 1, value: inner.max.y, inward: 1.0, span: (0.1, 9.9) },
    ];
    let faces = walls.into_iter().chain(obstacles.iter().flat_map(box_faces));
    let mut features = Vec::new();
    for face in faces {
        let area = (face.span.1 - face.span.0) * (z_hi - z_lo);
        let count = Poisson::new(density * area).map_err(|e| Error::domain(e.to_string()))?.sample(&mut frng) as usize;
        for _ in 0..count {
            let s = frng.random_range(face.span.0..face.span.1);
            let z = frng.random_range(z_lo..z_hi);
            let score = frng.random_range(lo..hi);
            let fixed = face.value + face.inward * 1e-3;
            let (x, y) = if face.axis == 0 { (fixed, s) } else { (s, fixed) };
            features.push(FeatureRecord(x, y, z, score));
        }
    }
    GroundTruthWorld::from_spec(WorldSpec {
        arena: Aabb::new(Vec3::zeros(), Vec3::new(10.0, 10.0, 2.0)),
        resolution: RES,
        obstacles,
        features,
        start,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub time: f64,
}

impl UavState {
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        Self { position, velocity: Vec3::zeros(), acceleration: Vec3::zeros(), yaw: wrap_angle(yaw), yaw_rate: 0.0, time: 0.0 }
    }

    pub fn viewpoint(&self) -> Viewpoint {
        Viewpoint::new(self.position, self.yaw)
    }
}

/// Sample both trajectories at `time + dt`. Returns the new state and whether
/// the trajectory end was reached (the state is clamped to the endpoint).
pub fn step_vehicle(state: &UavState, pos: &PositionTrajectory, yaw: &YawTrajectory, dt: f64) -> Result<(UavState, bool)> {
    if !(dt >= 0.0) {
        return Err(Error::domain("time step must be non-negative"));
    }
    if dt == 0.0 {
        return Ok((*state, state.time >= pos.end_time()));
    }
    let t = state.time + dt;
    let end = pos.end_time();
    let done = t >= end;
    let s = t.min(end);
    let (velocity, acceleration, yaw_rate) =
        if done { (Vec3::zeros(), Vec3::zeros(), 0.0) } else { (pos.velocity(s), pos.acceleration(s), yaw.rate(s)) };
    Ok((
        UavState { position: pos.position(s), velocity, acceleration, yaw: yaw.yaw(s), yaw_rate, time: t },
        done,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackedFeature {
    pub id: FeatureId,
    pub score: f64,
    pub position: Vec3,
}

/// Features in both visible sets (ascending ids) whose residual angular rate
/// `|ψ̂ − ψ̇|` at the current pose is within `omega_blur`.
pub fn filter_tracked(
    prev_visible: &[FeatureId],
    cur_visible: &[FeatureId],
    cur: &Viewpoint,
    velocity: &Vec3,
    yaw_rate: f64,
    fm: &FeatureMap,
    omega_blur: f64,
) -> Vec<TrackedFeature> {
    intersect_sorted(prev_visible, cur_visible)
        .into_iter()
        .filter_map(|id| fm.get(id))
        .filter(|f| match desired_yaw_rate(&cur.position, velocity, &f.position) {
            Ok(hat) => (hat - yaw_rate).abs() <= omega_blur,
            Err(_) => false,
        })
        .map(|f| TrackedFeature { id: f.id, score: f.score, position: f.position })
        .collect()
}

/// Covisible, unblurred features between two consecutive frames.
pub fn tracked_features(
    prev: &Viewpoint,
    cur: &Viewpoint,
    velocity: &Vec3,
    yaw_rate: f64,
    fm: &FeatureMap,
    grid: &VoxelGrid,
    cam: &CameraModel,
    omega_blur: f64,
) -> Vec<TrackedFeature> {
    let a = crate::world::visible_features(fm, grid, prev, cam);
    let b = crate::world::visible_features(fm, grid, cur, cam);
    filter_tracked(&a, &b, cur, velocity, yaw_rate, fm, omega_blur)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftParams {
    pub sigma_min: f64,
    pub sigma_gain: f64,
    /// Quality scale; defaults to the planner's `q_hat_v` when absent.
    pub q_ref: Option<f64>,
}

impl Default for DriftParams {
    fn default() -> Self {
        Self { sigma_min: 0.002, sigma_gain: 0.07, q_ref: None }
    }
}

#[derive(Debug, Clone)]
pub struct VioState {
    pub drift: Vec3,
    rng: ChaCha8Rng,
    pub sigma_min: f64,
    pub sigma_gain: f64,
    pub q_ref: f64,
}

impl VioState {
    pub fn new(seed: u64, sigma_min: f64, sigma_gain: f64, q_ref: f64) -> Self {
        Self { drift: Vec3::zeros(), rng: ChaCha8Rng::seed_from_u64(seed ^ DRIFT_STREAM), sigma_min, sigma_gain, q_ref }
    }

    pub fn sigma(&self, q: f64) -> f64 {
        self.sigma_min + self.sigma_gain * (1.0 - q / self.q_ref).max(0.0)
    }
}

/// `drift += σ(q)·√dt·η` with `η` a standard normal 3-vector from the seeded stream.
pub fn vio_update(vio: &mut VioState, q: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !(q >= 0.0) {
        return Err(Error::domain("vio_update needs dt > 0 and q >= 0"));
    }
    let eta = Vec3::new(
        StandardNormal.sample(&mut vio.rng),
        StandardNormal.sample(&mut vio.rng),
        StandardNormal.sample(&mut vio.rng),
    );
    vio.drift += eta * (vio.sigma(q) * dt.sqrt());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub thresholds: Vec<f64>,
    pub time_cap: f64,
    pub exploration_target: f64,
    pub omega_blur: f64,
    pub drift: DriftParams,
    pub replan_interval: f64,
    pub max_failed_cycles: usize,
    pub max_stall_cycles: usize,
    /// Candidates tried per planning cycle before the cycle counts as failed.
    pub attempts_per_cycle: usize,
    /// Half-width of the box around the start that is known before take-off.
    pub start_bubble: f64,
    pub start_yaw: f64,
    /// Yaw rate used to look around when no subgoal is available.
    pub scan_rate: f64,
    pub heatmap_bins: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            thresholds: vec![1.0, 2.0, 3.0],
            time_cap: 300.0,
            exploration_target: 0.95,
            omega_blur: 0.8,
            drift: DriftParams::default(),
            replan_interval: 2.0,
            max_failed_cycles: 5,
            max_stall_cycles: 3,
            attempts_per_cycle: 5,
            start_bubble: 0.5,
            start_yaw: std::f64::consts::FRAC_PI_4,
            scan_rate: 0.6,
            heatmap_bins: 32,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty()
            || self.thresholds.iter().any(|t| !(*t > 0.0))
            || self.thresholds.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(Error::domain("sim.thresholds must be positive and strictly ascending"));
        }
        let positive = [
            ("sim.time_cap", self.time_cap),
            ("sim.omega_blur", self.omega_blur),
            ("sim.replan_interval", self.replan_interval),
            ("sim.drift.sigma_min", self.drift.sigma_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.drift.sigma_gain >= 0.0) || self.drift.q_ref.is_some_and(|q| !(q > 0.0)) {
            return Err(Error::domain("sim.drift.sigma_gain must be >= 0 and q_ref > 0"));
        }
        if !(self.exploration_target > 0.0 && self.exploration_target <= 1.0) {
            return Err(Error::domain("sim.exploration_target must lie in (0, 1]"));
        }
        if self.max_failed_cycles == 0 || self.max_stall_cycles == 0 || self.attempts_per_cycle == 0 || self.heatmap_bins == 0 {
            return Err(Error::domain("sim counters must be at least 1"));
        }
        if !(self.start_bubble >= 0.0 && self.scan_rate >= 0.0) {
            return Err(Error::domain("sim.start_bubble and sim.scan_rate must be non-negative"));
        }
        Ok(())
    }
}

/// Where an episode's world comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorldSource {
    Procedural { texture: TextureLevel, seed: u64 },
    Spec(WorldSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeConfig {
    pub world: WorldSource,
    /// Seeds the drift stream.
    pub seed: u64,
    pub planner: PlannerParams,
    pub corridor: CorridorParams,
    pub camera: CameraModel,
    pub sim: SimParams,
}

impl EpisodeConfig {
    pub fn procedural(texture: TextureLevel, seed: u64) -> Self {
        Self {
            world: WorldSource::Procedural { texture, seed },
            seed,
            planner: PlannerParams::default(),
            corridor: CorridorParams::default(),
            camera: CameraModel::default(),
            sim: SimParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        self.corridor.validate()?;
        self.camera.validate()?;
        self.sim.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub time: f64,
    pub position: Vec3,
    pub yaw: f64,
    pub tracked: Vec<TrackedFeature>,
    pub tracked_quality: f64,
    pub drift_norm: f64,
    pub exploration_rate: f64,
}

impl FrameRecord {
    pub fn tracked_count(&self) -> usize {
        self.tracked.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Explored,
    TimeCap,
    Stalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WallClock {
    pub total_seconds: f64,
    pub planning_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdOutcome {
    pub threshold: f64,
    /// Exploration rate when drift first exceeded the threshold, else the final rate.
    pub coverage: f64,
    pub exceeded_at: Option<f64>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub frames: Vec<FrameRecord>,
    pub thresholds: Vec<ThresholdOutcome>,
    pub final_exploration_rate: f64,
    pub max_drift: f64,
    pub sim_time: f64,
    pub termination: Termination,
    pub replans: usize,
    pub failed_cycles: usize,
    pub yaw_dilations: usize,
    pub distance_travelled: f64,
    pub exploration_target: f64,
    pub wall_clock: WallClock,
}

impl EpisodeMetrics {
    pub fn exploration_curve(&self) -> Vec<(f64, f64)> {
        self.frames.iter().map(|f| (f.time, f.exploration_rate)).collect()
    }

    pub fn mean_tracked_count(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.tracked.len() as f64).sum::<f64>() / self.frames.len() as f64
    }

    pub fn mean_tracked_quality(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.tracked_quality).sum::<f64>() / self.frames.len() as f64
    }

    /// Each frame's explored free volume divided by the run's final one.
    pub fn normalized_progress(&self) -> Vec<f64> {
        let last = self.final_exploration_rate;
        self.frames.iter().map(|f| if last > 0.0 { f.exploration_rate / last } else { 0.0 }).collect()
    }

    /// Mean tracked count over frames with normalized progress ≤ `upto`.
    pub fn mean_tracked_until(&self, upto: f64) -> f64 {
        let progress = self.normalized_progress();
        let (sum, n) = self
            .frames
            .iter()
            .zip(progress)
            .filter(|(_, p)| *p <= upto)
            .fold((0.0, 0usize), |(s, n), (f, _)| (s + f.tracked.len() as f64, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Final rate reaches the target and drift stayed below `threshold` throughout.
pub fn success_under_threshold(metrics: &EpisodeMetrics, threshold: f64) -> Result<bool> {
    if !(threshold > 0.0) {
        return Err(Error::domain("threshold must be positive"));
    }
    Ok(metrics.final_exploration_rate >= metrics.exploration_target && metrics.max_drift < threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub bins: (usize, usize),
    /// Row-major `[v][u]` track-frame counts.
    pub counts: Vec<f64>,
    pub frames: usize,
}

impl Heatmap {
    pub fn total_count(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Mean tracked features per frame.
    pub fn frame_averaged_mass(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.total_count() / self.frames as f64
        }
    }

    /// Frame-averaged histogram scaled to a maximum of 1 (all zeros if empty).
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.counts.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            self.counts.iter().map(|c| c / max).collect()
        } else {
            vec![0.0; self.counts.len()]
        }
    }
}

/// Project every tracked feature of every frame into the image and bin it.
pub fn feature_heatmap(metrics: &EpisodeMetrics, cam: &CameraModel, bins: (usize, usize)) -> Heatmap {
    let (bu, bv) = bins;
    let mut counts = vec![0.0; bu * bv];
    for frame in &metrics.frames {
        let vp = Viewpoint::new(frame.position, frame.yaw);
        for f in &frame.tracked {
            if let Some((u, v)) = cam.project(&vp, &f.position) {
                let iu = ((u / cam.image_width as f64) * bu as f64).floor().clamp(0.0, (bu - 1) as f64) as usize;
                let iv = ((v / cam.image_height as f64) * bv as f64).floor().clamp(0.0, (bv - 1) as f64) as usize;
                counts[iv * bu + iu] += 1.0;
            }
        }
    }
    Heatmap { bins, counts, frames: metrics.frames.len() }
}

struct ActivePlan {
    position: PositionTrajectory,
    yaw: YawTrajectory,
    planned_at: f64,
    cluster: Vec<VoxelIndex>,
}

enum PlanOutcome {
    Planned(Box<ActivePlan>, bool),
    NoSubgoal,
    Failed,
}

struct Episode<'a> {
    config: &'a EpisodeConfig,
    world: GroundTruthWorld,
    grid: VoxelGrid,
    revealed: FeatureMap,
}

impl Episode<'_> {
    fn plan(&self, state: &UavState) -> Result<PlanOutcome> {
        let params = &self.config.planner;
        let cam = &self.config.camera;
        let mut clusters = split_clusters(
            detect_frontiers(&self.grid, params.min_cluster_size),
            &self.grid,
            params.max_cluster_extent,
        );
        for c in &mut clusters {
            c.candidates = sample_viewpoints(c, &self.grid, &params.sampling);
        }
        let current = state.viewpoint();
        let start = BoundaryState { position: state.position, velocity: state.velocity, acceleration: state.acceleration };
        for _ in 0..self.config.sim.attempts_per_cycle {
            let Some(best) = select_best(&clusters, &self.grid, &self.revealed, cam, &current, params) else {
                return Ok(PlanOutcome::NoSubgoal);
            };
            let attempt = plan_trajectory(
                &self.grid,
                &start,
                &best.viewpoint.position,
                params.v_max,
                params.a_max,
                &self.config.corridor,
                state.time,
            )
            .and_then(|(position, _)| {
                let input = YawPlanInput {
                    position: &position,
                    psi_c: state.yaw,
                    psi_g: best.viewpoint.yaw,
                    features: &self.revealed,
                    grid: &self.grid,
                    camera: cam,
                    params,
                };
                let yaw = plan_yaw(&input)?;
                let position = if yaw.dilation > 1.0 { position.dilated(yaw.dilation)? } else { position };
                Ok((position, yaw))
            });
            match attempt {
                Ok((position, yaw)) => {
                    let dilated = yaw.dilation > 1.0;
                    let plan = ActivePlan {
                        position,
                        yaw,
                        planned_at: state.time,
                        cluster: clusters[best.cluster].voxels.clone(),
                    };
                    return Ok(PlanOutcome::Planned(Box::new(plan), dilated));
                }
                Err(Error::Domain(msg)) => return Err(Error::Domain(msg)),
                Err(_) => {
                    let cands = &mut clusters[best.cluster].candidates;
                    cands.retain(|c| *c != best.viewpoint);
                }
            }
        }
        Ok(PlanOutcome::Failed)
    }

    fn cluster_dissolved(&self, cluster: &[VoxelIndex]) -> bool {
        let alive = cluster.iter().filter(|v| crate::frontier::is_frontier(&self.grid, **v)).count();
        alive < self.config.planner.min_cluster_size
    }
}

/// Run one exploration episode to completion.
pub fn run_episode(config: &EpisodeConfig) -> Result<EpisodeMetrics> {
    let clock = Instant::now();
    let mut planning_seconds = 0.0;
    config.validate()?;
    let world = match &config.world {
        WorldSource::Procedural { texture, seed } => generate_world(*texture, *seed)?,
        WorldSource::Spec(spec) => GroundTruthWorld::from_spec(spec.clone())?,
    };
    let sim = &config.sim;
    let cam = &config.camera;
    let mut grid = world.truth().unknown_like();
    let start = world.start();
    if let Some(center) = grid.index_of(&start) {
        let r = (sim.start_bubble / grid.resolution()).round() as i64;
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if let Some(idx) = grid.offset(center, [dx, dy, dz]) {
                        grid.set(idx, world.truth().get(idx));
                    }
                }
            }
        }
    }
    let mut ep = Episode { config, world, grid, revealed: FeatureMap::new() };
    let q_ref = sim.drift.q_ref.unwrap_or(config.planner.q_hat_v);
    let mut vio = VioState::new(config.seed, sim.drift.sigma_min, sim.drift.sigma_gain, q_ref);
    let dt = 1.0 / cam.frame_rate;
    let mut state = UavState::at_rest(start, sim.start_yaw);

    let first = observe(&mut ep.grid, &mut ep.revealed, &ep.world, &state.viewpoint(), cam)?;
    let mut prev_visible = first.visible;
    let mut frames = Vec::new();
    let mut rate = exploration_rate(&ep.grid, &ep.world)?;
    frames.push(FrameRecord {
        time: 0.0,
        position: state.position,
        yaw: state.yaw,
        tracked: Vec::new(),
        tracked_quality: 0.0,
        drift_norm: 0.0,
        exploration_rate: rate,
    });

    let mut plan: Option<ActivePlan> = None;
    let mut plan_done = true;
    let mut failed_cycles = 0usize;
    let mut stall_cycles = 0usize;
    let mut total_failed = 0usize;
    let mut replans = 0usize;
    let mut dilations = 0usize;
    let mut retry_after = f64::NEG_INFINITY;
    let mut distance = 0.0;
    let termination = loop {
        if rate >= sim.exploration_target {
            break Termination::Explored;
        }
        if state.time >= sim.time_cap {
            break Termination::TimeCap;
        }
        let due = match &plan {
            None => true,
            Some(p) => plan_done || state.time - p.planned_at >= sim.replan_interval - 1e-9 || ep.cluster_dissolved(&p.cluster),
        };
        if due && state.time >= retry_after - 1e-9 {
            let t0 = Instant::now();
            let outcome = ep.plan(&state)?;
            planning_seconds += t0.elapsed().as_secs_f64();
            match outcome {
                PlanOutcome::Planned(p, dilated) => {
                    plan = Some(*p);
                    plan_done = false;
                    replans += 1;
                    dilations += dilated as usize;
                    failed_cycles = 0;
                    stall_cycles = 0;
                }
                PlanOutcome::NoSubgoal => {
                    retry_after = state.time + sim.replan_interval;
                    stall_cycles += 1;
                    if plan_done {
                        plan = None;
                    }
                    if stall_cycles >= sim.max_stall_cycles {
                        break Termination::Stalled;
                    }
                }
                PlanOutcome::Failed => {
                    retry_after = state.time + sim.replan_interval;
                    failed_cycles += 1;
                    total_failed += 1;
                    if plan_done {
                        plan = None;
                    }
                    if failed_cycles >= sim.max_failed_cycles {
                        break Termination::Stalled;
                    }
                }
            }
        }
        let prev_pos = state.position;
        state = match &plan {
            Some(p) if !plan_done => {
                let (next, done) = step_vehicle(&state, &p.position, &p.yaw, dt)?;
                plan_done = done;
                next
            }
            _ => UavState {
                velocity: Vec3::zeros(),
                acceleration: Vec3::zeros(),
                yaw: wrap_angle(state.yaw + sim.scan_rate * dt),
                yaw_rate: sim.scan_rate,
                time: state.time + dt,
                ..state
            },
        };
        distance += (state.position - prev_pos).norm();
        let vp = state.viewpoint();
        let obs = observe(&mut ep.grid, &mut ep.revealed, &ep.world, &vp, cam)?;
        let tracked = filter_tracked(
            &prev_visible,
            &obs.visible,
            &vp,
            &state.velocity,
            state.yaw_rate,
            ep.world.features(),
            sim.omega_blur,
        );
        prev_visible = obs.visible;
        let quality: f64 = tracked.iter().map(|f| f.score).sum();
        vio_update(&mut vio, quality, dt)?;
        rate = exploration_rate(&ep.grid, &ep.world)?;
        frames.push(FrameRecord {
            time: state.time,
            position: state.position,
            yaw: state.yaw,
            tracked,
            tracked_quality: quality,
            drift_norm: vio.drift.norm(),
            exploration_rate: rate,
        });
    };

    let final_rate = rate;
    let max_drift = frames.iter().map(|f| f.drift_norm).fold(0.0, f64::max);
    let mut metrics = EpisodeMetrics {
        thresholds: Vec::new(),
        final_exploration_rate: final_rate,
        max_drift,
        sim_time: state.time,
        termination,
        replans,
        failed_cycles: total_failed,
        yaw_dilations: dilations,
        distance_travelled: distance,
        exploration_target: sim.exploration_target,
        wall_clock: WallClock::default(),
        frames,
    };
    for &theta in &sim.thresholds {
        let first = metrics.frames.iter().find(|f| f.drift_norm > theta);
        metrics.thresholds.push(ThresholdOutcome {
            threshold: theta,
            coverage: first.map_or(final_rate, |f| f.exploration_rate),
            exceeded_at: first.map(|f| f.time),
            success: success_under_threshold(&metrics, theta)?,
        });
    }
    metrics.wall_clock = WallClock { total_seconds: clock.elapsed().as_secs_f64(), planning_seconds };
    Ok(metrics)
}

/// Known-state check used by tests: every position in the log lies in a voxel
/// that is free in the ground truth.
pub fn frames_in_free_space(metrics: &EpisodeMetrics, world: &GroundTruthWorld) -> bool {
    metrics.frames.iter().all(|f| world.truth().state_at(&f.position) == Some(CellState::Free))
}
