//! Voxel occupancy, features, camera model and line-of-sight queries.
//!
//! The explorer's map is a dense tri-state [`VoxelGrid`]. The ground truth is a
//! [`GroundTruthWorld`]: an arena whose one-voxel outer shell (walls, floor,
//! ceiling) is solid, plus axis-aligned box obstacles and surface features.
//!
//! Line of sight uses 3D DDA voxel stepping. For feature visibility only
//! `Occupied` voxels block; `Unknown` voxels are transparent.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{wrap_angle, Error, Result, Vec3};

pub type VoxelIndex = [usize; 3];
pub type FeatureId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CellState {
    Unknown = 0,
    Free = 1,
    Occupied = 2,
}

/// Axis-aligned box, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Distance from `p` to the nearest face, negative outside.
    pub fn clearance(&self, p: &Vec3) -> f64 {
        (0..3)
            .map(|a| (p[a] - self.min[a]).min(self.max[a] - p[a]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| (self.max[a] - self.min[a]).max(0.0)).product()
    }

    pub fn intersection(&self, other: &Aabb) -> Aabb {
        Aabb::new(self.min.sup(&other.min), self.max.inf(&other.max))
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }
}

/// Dense tri-state occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    origin: Vec3,
    resolution: f64,
    dims: [usize; 3],
    cells: Vec<CellState>,
}

impl VoxelGrid {
    pub fn new(origin: Vec3, resolution: f64, dims: [usize; 3], fill: CellState) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::domain(format!("grid resolution must be positive, got {resolution}")));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::domain(format!("grid dims must be >= 1, got {dims:?}")));
        }
        let len = dims[0] * dims[1] * dims[2];
        Ok(Self { origin, resolution, dims, cells: vec![fill; len] })
    }

    /// Empty (all `Unknown`) grid with the same geometry as `self`.
    pub fn unknown_like(&self) -> Self {
        Self { cells: vec![CellState::Unknown; self.cells.len()], ..self.clone() }
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn bounds(&self) -> Aabb {
        let extent = Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.resolution;
        Aabb::new(self.origin, self.origin + extent)
    }

    pub fn same_geometry(&self, other: &VoxelGrid) -> bool {
        self.dims == other.dims && self.origin == other.origin && self.resolution == other.resolution
    }

    #[inline]
    pub fn linear(&self, idx: VoxelIndex) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    #[inline]
    pub fn unlinear(&self, i: usize) -> VoxelIndex {
        let x = i % self.dims[0];
        let rest = i / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn get(&self, idx: VoxelIndex) -> CellState {
        self.cells[self.linear(idx)]
    }

    #[inline]
    pub fn get_linear(&self, i: usize) -> CellState {
        self.cells[i]
    }

    #[inline]
    pub fn set(&mut self, idx: VoxelIndex, state: CellState) {
        let i = self.linear(idx);
        self.cells[i] = state;
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn in_bounds(&self, idx: [i64; 3]) -> bool {
        (0..3).all(|a| idx[a] >= 0 && (idx[a] as usize) < self.dims[a])
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn index_of(&self, p: &Vec3) -> Option<VoxelIndex> {
        let mut out = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.resolution).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    pub fn center(&self, idx: VoxelIndex) -> Vec3 {
        self.origin + Vec3::new(idx[0] as f64 + 0.5, idx[1] as f64 + 0.5, idx[2] as f64 + 0.5) * self.resolution
    }

    pub fn state_at(&self, p: &Vec3) -> Option<CellState> {
        self.index_of(p).map(|i| self.get(i))
    }

    pub fn count(&self, state: CellState) -> usize {
        self.cells.iter().filter(|c| **c == state).count()
    }

    /// Face neighbours inside the grid.
    pub fn neighbors6(&self, idx: VoxelIndex) -> impl Iterator<Item = VoxelIndex> + '_ {
        const OFFSETS: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
        OFFSETS.iter().filter_map(move |o| self.offset(idx, *o))
    }

    #[inline]
    pub fn offset(&self, idx: VoxelIndex, o: [i64; 3]) -> Option<VoxelIndex> {
        let n = [idx[0] as i64 + o[0], idx[1] as i64 + o[1], idx[2] as i64 + o[2]];
        self.in_bounds(n).then(|| [n[0] as usize, n[1] as usize, n[2] as usize])
    }

    /// True iff every voxel in the inclusive index box is `state`. Boxes reaching
    /// outside the grid fail.
    pub fn box_all(&self, lo: [i64; 3], hi: [i64; 3], state: CellState) -> bool {
        if !self.in_bounds(lo) || !self.in_bounds(hi) {
            return false;
        }
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                let row = self.linear([0, y as usize, z as usize]);
                if self.cells[row + lo[0] as usize..=row + hi[0] as usize].iter().any(|c| *c != state) {
                    return false;
                }
            }
        }
        true
    }
}

/// Visit voxels crossed by the segment `from → to` in order (3D DDA). Both
/// endpoints must lie in the grid. The visitor returns `false` to stop early.
pub fn traverse(grid: &VoxelGrid, from: &Vec3, to: &Vec3, mut visit: impl FnMut(VoxelIndex) -> bool) {
    traverse_linear(grid, from, to, |idx, _| visit(idx));
}

/// [`traverse`] that also hands the visitor each voxel's linear index.
pub fn traverse_linear(grid: &VoxelGrid, from: &Vec3, to: &Vec3, mut visit: impl FnMut(VoxelIndex, usize) -> bool) {
    let (Some(start), Some(end)) = (grid.index_of(from), grid.index_of(to)) else {
        return;
    };
    let a = (from - grid.origin) / grid.resolution;
    let b = (to - grid.origin) / grid.resolution;
    let dir = b - a;
    let dims = [grid.dims[0] as i64, grid.dims[1] as i64, grid.dims[2] as i64];
    let stride = [1i64, dims[0], dims[0] * dims[1]];
    let mut cur = [start[0] as i64, start[1] as i64, start[2] as i64];
    let goal = [end[0] as i64, end[1] as i64, end[2] as i64];
    let mut lin = grid.linear(start) as i64;
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for ax in 0..3 {
        if dir[ax] > 0.0 {
            step[ax] = 1;
            t_delta[ax] = 1.0 / dir[ax];
            t_max[ax] = ((cur[ax] + 1) as f64 - a[ax]) / dir[ax];
        } else if dir[ax] < 0.0 {
            step[ax] = -1;
            t_delta[ax] = -1.0 / dir[ax];
            t_max[ax] = (cur[ax] as f64 - a[ax]) / dir[ax];
        }
    }
    let budget = (0..3).map(|ax| (goal[ax] - cur[ax]).abs()).sum::<i64>() + 3;
    for _ in 0..=budget {
        if !visit([cur[0] as usize, cur[1] as usize, cur[2] as usize], lin as usize) || cur == goal {
            return;
        }
        let mut ax = 0;
        if t_max[1] < t_max[ax] {
            ax = 1;
        }
        if t_max[2] < t_max[ax] {
            ax = 2;
        }
        if t_max[ax] > 1.0 + 1e-9 {
            return;
        }
        cur[ax] += step[ax];
        if cur[ax] < 0 || cur[ax] >= dims[ax] {
            return;
        }
        lin += step[ax] * stride[ax];
        t_max[ax] += t_delta[ax];
    }
}

/// Clip `from → to` to the grid box and traverse the remaining part.
pub fn traverse_clipped(grid: &VoxelGrid, from: &Vec3, to: &Vec3, mut visit: impl FnMut(VoxelIndex) -> bool) {
    traverse_clipped_linear(grid, from, to, |idx, _| visit(idx));
}

fn traverse_clipped_linear(grid: &VoxelGrid, from: &Vec3, to: &Vec3, visit: impl FnMut(VoxelIndex, usize) -> bool) {
    let bounds = grid.bounds();
    let eps = 1e-9 * grid.resolution;
    let lo = bounds.min.add_scalar(eps);
    let hi = bounds.max.add_scalar(-eps);
    let d = to - from;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for ax in 0..3 {
        if d[ax].abs() < 1e-15 {
            if from[ax] < lo[ax] || from[ax] > hi[ax] {
                return;
            }
        } else {
            let ta = (lo[ax] - from[ax]) / d[ax];
            let tb = (hi[ax] - from[ax]) / d[ax];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    if t0 > t1 {
        return;
    }
    traverse_linear(grid, &(from + d * t0), &(from + d * t1), visit);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RayOutcome {
    Clear,
    Blocked(VoxelIndex),
}

/// First `Occupied` voxel on the segment, if any.
pub fn raycast(grid: &VoxelGrid, from: &Vec3, to: &Vec3) -> Result<RayOutcome> {
    if grid.index_of(from).is_none() || grid.index_of(to).is_none() {
        return Err(Error::domain("raycast endpoint outside the grid"));
    }
    let mut outcome = RayOutcome::Clear;
    traverse(grid, from, to, |idx| {
        if grid.get(idx) == CellState::Occupied {
            outcome = RayOutcome::Blocked(idx);
            false
        } else {
            true
        }
    });
    Ok(outcome)
}

/// No `Occupied` voxel strictly before the voxel containing `to`.
pub fn clear_up_to(grid: &VoxelGrid, from: &Vec3, to: &Vec3) -> bool {
    let Some(target) = grid.index_of(to) else {
        return false;
    };
    let target = grid.linear(target);
    let mut clear = true;
    traverse_linear(grid, from, to, |_, li| {
        if li == target {
            return false;
        }
        if grid.get_linear(li) == CellState::Occupied {
            clear = false;
            return false;
        }
        true
    });
    clear
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub id: FeatureId,
    pub position: Vec3,
    pub score: f64,
}

/// Feature points with strictly positive quality scores and unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureMap {
    entries: Vec<Feature>,
    index: HashMap<FeatureId, usize>,
}

impl FeatureMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_features(features: impl IntoIterator<Item = Feature>) -> Result<Self> {
        let mut map = Self::new();
        for f in features {
            map.insert(f)?;
        }
        Ok(map)
    }

    pub fn insert(&mut self, feature: Feature) -> Result<()> {
        if !(feature.score > 0.0 && feature.score.is_finite()) {
            return Err(Error::domain(format!("feature {} has non-positive score {}", feature.id, feature.score)));
        }
        if self.index.contains_key(&feature.id) {
            return Err(Error::domain(format!("duplicate feature id {}", feature.id)));
        }
        self.index.insert(feature.id, self.entries.len());
        self.entries.push(feature);
        Ok(())
    }

    /// Insert unless the id is already present. Returns whether it was added.
    pub fn reveal(&mut self, feature: Feature) -> bool {
        if self.index.contains_key(&feature.id) {
            return false;
        }
        self.insert(feature).is_ok()
    }

    pub fn get(&self, id: FeatureId) -> Option<&Feature> {
        self.index.get(&id).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, id: FeatureId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Feature> {
        self.entries.iter()
    }

    pub fn score_sum(&self, ids: &[FeatureId]) -> f64 {
        ids.iter().filter_map(|id| self.get(*id)).map(|f| f.score).sum()
    }
}

/// Camera pose: position plus yaw in (−π, π]. Pitch and roll are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub position: Vec3,
    pub yaw: f64,
}

impl Viewpoint {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Self { position, yaw: wrap_angle(yaw) }
    }
}

/// Forward-looking pinhole camera with zero pitch and roll.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub horizontal_fov: f64,
    pub vertical_fov: f64,
    pub max_range: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub focal_px: f64,
    pub frame_rate: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        let width = 640;
        let height = 480;
        let hfov = std::f64::consts::FRAC_PI_2;
        let focal = width as f64 / (2.0 * (hfov / 2.0).tan());
        Self {
            horizontal_fov: hfov,
            vertical_fov: 2.0 * (height as f64 / (2.0 * focal)).atan(),
            max_range: 3.0,
            image_width: width,
            image_height: height,
            focal_px: focal,
            frame_rate: 10.0,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        use std::f64::consts::PI;
        let fov_ok = |v: f64| v > 0.0 && v < PI;
        if !fov_ok(self.horizontal_fov) || !fov_ok(self.vertical_fov) {
            return Err(Error::domain("camera fields of view must lie in (0, π)"));
        }
        if !(self.max_range > 0.0) || !(self.frame_rate > 0.0) {
            return Err(Error::domain("camera range and frame rate must be positive"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::domain("camera image must be non-empty"));
        }
        let expected = self.image_width as f64 / (2.0 * (self.horizontal_fov / 2.0).tan());
        if (expected - self.focal_px).abs() > 1e-6 * expected {
            return Err(Error::domain(format!(
                "focal length {} inconsistent with width and horizontal fov (expected {expected})",
                self.focal_px
            )));
        }
        Ok(())
    }

    /// Camera-frame coordinates `(forward, left, up)` of a world point.
    #[inline]
    pub fn to_camera(vp: &Viewpoint, point: &Vec3) -> Vec3 {
        let d = point - vp.position;
        let (s, c) = vp.yaw.sin_cos();
        Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    /// Inside both angular fields of view (ignores range).
    #[inline]
    pub fn in_fov(&self, vp: &Viewpoint, point: &Vec3) -> bool {
        let cam = Self::to_camera(vp, point);
        cam.x > 0.0
            && cam.y.abs() <= cam.x * (self.horizontal_fov / 2.0).tan()
            && cam.z.abs() <= cam.x * (self.vertical_fov / 2.0).tan()
    }

    /// Inside the fields of view and within range.
    #[inline]
    pub fn sees(&self, vp: &Viewpoint, point: &Vec3) -> bool {
        (point - vp.position).norm_squared() <= self.max_range * self.max_range && self.in_fov(vp, point)
    }

    /// Pixel coordinates `(u, v)` of a point in front of the camera; `u` grows to
    /// the right and `v` downwards.
    pub fn project(&self, vp: &Viewpoint, point: &Vec3) -> Option<(f64, f64)> {
        let cam = Self::to_camera(vp, point);
        if cam.x <= 0.0 {
            return None;
        }
        let u = self.image_width as f64 / 2.0 - self.focal_px * cam.y / cam.x;
        let v = self.image_height as f64 / 2.0 - self.focal_px * cam.z / cam.x;
        Some((u, v))
    }
}

/// Ids (ascending) of features in range, in the field of view and with a clear
/// line of sight up to the feature's own voxel.
pub fn visible_features(fm: &FeatureMap, grid: &VoxelGrid, vp: &Viewpoint, cam: &CameraModel) -> Vec<FeatureId> {
    let mut out: Vec<FeatureId> = fm
        .iter()
        .filter(|f| cam.sees(vp, &f.position) && clear_up_to(grid, &vp.position, &f.position))
        .map(|f| f.id)
        .collect();
    out.sort_unstable();
    out
}

/// Intersection of two ascending id lists.
pub fn intersect_sorted(a: &[FeatureId], b: &[FeatureId]) -> Vec<FeatureId> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Serializable description of a ground-truth world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub arena: Aabb,
    pub resolution: f64,
    pub obstacles: Vec<Aabb>,
    pub features: Vec<FeatureRecord>,
    pub start: Vec3,
}

/// A feature as written in world files: `[x, y, z, score]`; ids are positions in the list.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord(pub f64, pub f64, pub f64, pub f64);

/// Fully known world used to drive sensing and to score exploration.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthWorld {
    spec: WorldSpec,
    features: FeatureMap,
    truth: VoxelGrid,
    free_count: usize,
}

impl GroundTruthWorld {
    pub fn from_spec(spec: WorldSpec) -> Result<Self> {
        let size = spec.arena.max - spec.arena.min;
        let res = spec.resolution;
        if !(res > 0.0) {
            return Err(Error::domain("world resolution must be positive"));
        }
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let n = (size[a] / res).round();
            if !(n >= 3.0) || ((n * res) - size[a]).abs() > 1e-6 {
                return Err(Error::domain(format!(
                    "arena extent {} along axis {a} is not a multiple (>= 3) of the resolution",
                    size[a]
                )));
            }
            dims[a] = n as usize;
        }
        let mut truth = VoxelGrid::new(spec.arena.min, res, dims, CellState::Free)?;
        for i in 0..truth.len() {
            let idx = truth.unlinear(i);
            let shell = (0..3).any(|a| idx[a] == 0 || idx[a] == dims[a] - 1);
            let c = truth.center(idx);
            if shell || spec.obstacles.iter().any(|o| o.contains(&c)) {
                truth.cells[i] = CellState::Occupied;
            }
        }
        let features = FeatureMap::from_features(spec.features.iter().enumerate().map(|(i, r)| Feature {
            id: i as FeatureId,
            position: Vec3::new(r.0, r.1, r.2),
            score: r.3,
        }))?;
        match truth.state_at(&spec.start) {
            Some(CellState::Free) => {}
            _ => return Err(Error::domain("start position must lie in free space")),
        }
        let free_count = truth.count(CellState::Free);
        Ok(Self { spec, features, truth, free_count })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn truth(&self) -> &VoxelGrid {
        &self.truth
    }

    pub fn free_count(&self) -> usize {
        self.free_count
    }

    pub fn start(&self) -> Vec3 {
        self.spec.start
    }
}

/// What one observation changed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationDelta {
    pub newly_free: usize,
    pub newly_occupied: usize,
    /// Features added to the revealed map by this call.
    pub revealed: Vec<FeatureId>,
    /// All ground-truth features visible from the pose.
    pub visible: Vec<FeatureId>,
}

/// Simulated depth sensing: cast rays over the field of view at roughly one
/// voxel of spacing at maximum range, mark traversed voxels `Free` and the first
/// solid voxel `Occupied` (per ground truth), and reveal visible features.
pub fn observe(
    grid: &mut VoxelGrid,
    revealed: &mut FeatureMap,
    world: &GroundTruthWorld,
    vp: &Viewpoint,
    cam: &CameraModel,
) -> Result<ObservationDelta> {
    let truth = world.truth();
    if !grid.same_geometry(truth) {
        return Err(Error::domain("map and ground truth differ in geometry"));
    }
    if grid.index_of(&vp.position).is_none() {
        return Err(Error::domain("viewpoint outside the grid"));
    }
    let mut delta = ObservationDelta::default();
    let step = grid.resolution() / cam.max_range;
    let th = (cam.horizontal_fov / 2.0).tan();
    let tv = (cam.vertical_fov / 2.0).tan();
    let nh = (2.0 * th / step).ceil() as usize + 1;
    let nv = (2.0 * tv / step).ceil() as usize + 1;
    let (s, c) = vp.yaw.sin_cos();
    let forward = Vec3::new(c, s, 0.0);
    let left = Vec3::new(-s, c, 0.0);
    let up = Vec3::z();
    for j in 0..nv {
        let y = tv * (2.0 * j as f64 / (nv - 1) as f64 - 1.0);
        for i in 0..nh {
            let x = th * (2.0 * i as f64 / (nh - 1) as f64 - 1.0);
            let dir = (forward + left * x + up * y).normalize();
            let end = vp.position + dir * cam.max_range;
            let cells = &mut grid.cells;
            traverse_clipped_linear(truth, &vp.position, &end, |_, li| {
                if truth.get_linear(li) == CellState::Occupied {
                    if cells[li] != CellState::Occupied {
                        cells[li] = CellState::Occupied;
                        delta.newly_occupied += 1;
                    }
                    false
                } else {
                    if cells[li] == CellState::Unknown {
                        cells[li] = CellState::Free;
                        delta.newly_free += 1;
                    }
                    true
                }
            });
        }
    }
    delta.visible = visible_features(world.features(), truth, vp, cam);
    for id in &delta.visible {
        let f = *world.features().get(*id).expect("visible ids come from the map");
        if revealed.reveal(f) {
            delta.revealed.push(*id);
        }
    }
    Ok(delta)
}

/// Observed-to-total ratio of ground-truth free voxels.
pub fn exploration_rate(grid: &VoxelGrid, world: &GroundTruthWorld) -> Result<f64> {
    let truth = world.truth();
    if !grid.same_geometry(truth) {
        return Err(Error::domain("map and ground truth differ in geometry"));
    }
    let known = grid
        .cells()
        .iter()
        .zip(truth.cells())
        .filter(|(g, t)| **g == CellState::Free && **t == CellState::Free)
        .count();
    Ok(known as f64 / world.free_count().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_grid(dims: [usize; 3]) -> VoxelGrid {
        VoxelGrid::new(Vec3::zeros(), 0.1, dims, CellState::Free).unwrap()
    }

    #[test]
    fn index_round_trip() {
        let g = open_grid([7, 5, 3]);
        for i in 0..g.len() {
            let idx = g.unlinear(i);
            assert_eq!(g.linear(idx), i);
            assert_eq!(g.index_of(&g.center(idx)), Some(idx));
        }
        assert!(g.index_of(&Vec3::new(0.75, 0.1, 0.1)).is_none());
        assert!(g.index_of(&Vec3::new(-0.01, 0.1, 0.1)).is_none());
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(VoxelGrid::new(Vec3::zeros(), 0.0, [1, 1, 1], CellState::Free).is_err());
        assert!(VoxelGrid::new(Vec3::zeros(), 0.1, [1, 0, 1], CellState::Free).is_err());
    }

    #[test]
    fn raycast_trivial_cases() {
        let mut g = open_grid([10, 10, 3]);
        let p = Vec3::new(0.25, 0.25, 0.15);
        assert_eq!(raycast(&g, &p, &p).unwrap(), RayOutcome::Clear);
        let q = Vec3::new(0.95, 0.25, 0.15);
        assert_eq!(raycast(&g, &p, &q).unwrap(), RayOutcome::Clear);
        g.set([5, 2, 1], CellState::Occupied);
        assert_eq!(raycast(&g, &p, &q).unwrap(), RayOutcome::Blocked([5, 2, 1]));
        assert!(raycast(&g, &p, &Vec3::new(2.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn traversal_is_connected_and_ends_at_target() {
        let g = open_grid([20, 20, 20]);
        let a = Vec3::new(0.123, 1.871, 0.456);
        let b = Vec3::new(1.777, 0.031, 1.905);
        let mut cells = Vec::new();
        traverse(&g, &a, &b, |i| {
            cells.push(i);
            true
        });
        assert_eq!(cells.first(), g.index_of(&a).as_ref());
        assert_eq!(cells.last(), g.index_of(&b).as_ref());
        for w in cells.windows(2) {
            let manhattan: i64 = (0..3).map(|k| (w[0][k] as i64 - w[1][k] as i64).abs()).sum();
            assert_eq!(manhattan, 1);
        }
    }

    #[test]
    fn camera_default_is_consistent() {
        let cam = CameraModel::default();
        cam.validate().unwrap();
        let bad = CameraModel { focal_px: 100.0, ..cam };
        assert!(bad.validate().is_err());
        let vp = Viewpoint::new(Vec3::zeros(), 0.0);
        let (u, v) = cam.project(&vp, &Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert_eq!((u, v), (320.0, 240.0));
        assert!(cam.project(&vp, &Vec3::new(-1.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn visible_features_basic() {
        let g = open_grid([30, 30, 10]);
        let cam = CameraModel::default();
        let vp = Viewpoint::new(Vec3::new(1.0, 1.5, 0.5), 0.0);
        assert!(visible_features(&FeatureMap::new(), &g, &vp, &cam).is_empty());
        let fm = FeatureMap::from_features([
            Feature { id: 7, position: Vec3::new(2.0, 1.5, 0.5), score: 0.5 },
            Feature { id: 3, position: Vec3::new(0.0, 1.5, 0.5), score: 0.5 },
        ])
        .unwrap();
        assert_eq!(visible_features(&fm, &g, &vp, &cam), vec![7]);
    }

    #[test]
    fn feature_map_invariants() {
        let mut fm = FeatureMap::new();
        fm.insert(Feature { id: 1, position: Vec3::zeros(), score: 0.3 }).unwrap();
        assert!(fm.insert(Feature { id: 1, position: Vec3::zeros(), score: 0.3 }).is_err());
        assert!(fm.insert(Feature { id: 2, position: Vec3::zeros(), score: 0.0 }).is_err());
        assert!(!fm.reveal(Feature { id: 1, position: Vec3::zeros(), score: 0.9 }));
        assert_eq!(fm.get(1).unwrap().score, 0.3);
    }

    #[test]
    fn intersect_sorted_lists() {
        assert_eq!(intersect_sorted(&[1, 3, 5, 9], &[2, 3, 4, 9, 10]), vec![3, 9]);
        assert!(intersect_sorted(&[], &[1]).is_empty());
    }
}
