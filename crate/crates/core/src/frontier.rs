//! Frontier detection, viewpoint sampling and perception-weighted subgoal selection.
//!
//! A candidate viewpoint `v` seen from the current pose `c` scores
//!
//! ```text
//! J(v) = −w_d·‖p_c − p_v‖ + w_c·s_c·Q_c(v) + w_v·tanh(Q_v(v) − Q̂_v)
//! ```
//!
//! where `Q_c` counts unknown voxels that would become observed, `s_c` is the
//! coverage scale and `Q_v` sums the scores of visible mapped features. The
//! feature term is dropped in the `no_pa_frontier` and `greedy` modes.

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::world::{clear_up_to, visible_features, CameraModel, CellState, FeatureMap, Viewpoint, VoxelGrid, VoxelIndex};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    Full,
    NoPaFrontier,
    NoYawOpt,
    Greedy,
}

impl PlannerMode {
    pub const ALL: [PlannerMode; 4] = [PlannerMode::Full, PlannerMode::NoPaFrontier, PlannerMode::NoYawOpt, PlannerMode::Greedy];

    pub fn as_str(&self) -> &'static str {
        match self {
            PlannerMode::Full => "full",
            PlannerMode::NoPaFrontier => "no_pa_frontier",
            PlannerMode::NoYawOpt => "no_yaw_opt",
            PlannerMode::Greedy => "greedy",
        }
    }

    /// Whether the feature term enters the frontier score.
    pub fn perception_aware_frontier(&self) -> bool {
        matches!(self, PlannerMode::Full | PlannerMode::NoYawOpt)
    }

    /// Whether yaw is optimised rather than linearly interpolated.
    pub fn optimizes_yaw(&self) -> bool {
        matches!(self, PlannerMode::Full | PlannerMode::NoPaFrontier)
    }
}

impl std::fmt::Display for PlannerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PlannerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlannerMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::domain(format!("unknown planner mode `{s}`")))
    }
}

/// Ring sampling of candidate viewpoints around a cluster centroid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingParams {
    pub radii: Vec<f64>,
    pub angles: usize,
    /// Every voxel within this distance (box metric) of a candidate must be known free.
    pub clearance: f64,
    pub max_candidates: usize,
    pub min_height: f64,
    pub max_height: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { radii: vec![0.8, 1.2, 1.6], angles: 12, clearance: 0.25, max_candidates: 36, min_height: 0.6, max_height: 1.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    pub w_d: f64,
    pub w_c: f64,
    pub w_v: f64,
    pub q_hat_v: f64,
    /// Multiplier applied to the unknown-voxel count before `w_c`.
    pub coverage_scale: f64,
    pub tau_cov: f64,
    pub delta_psi: f64,
    pub lambda_psi: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub psi_dot_max: f64,
    pub psi_ddot_max: f64,
    pub mode: PlannerMode,
    pub min_cluster_size: usize,
    /// Candidates expected to observe fewer unknown voxels are not subgoals.
    pub min_coverage: usize,
    /// Clusters wider than this along x or y are split.
    pub max_cluster_extent: f64,
    /// Enforce matching yaw rate at segment joints.
    pub yaw_joint_c1: bool,
    pub sampling: SamplingParams,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            w_d: 0.5,
            w_c: 1.0,
            w_v: 2.0,
            q_hat_v: 0.4,
            coverage_scale: 0.001,
            tau_cov: 0.15,
            delta_psi: 0.2,
            lambda_psi: 0.1,
            v_max: 1.5,
            a_max: 2.0,
            psi_dot_max: 1.5,
            psi_ddot_max: 3.0,
            mode: PlannerMode::Full,
            min_cluster_size: 5,
            min_coverage: 1,
            max_cluster_extent: 2.0,
            yaw_joint_c1: false,
            sampling: SamplingParams::default(),
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("w_d", self.w_d), ("w_c", self.w_c), ("w_v", self.w_v), ("lambda_psi", self.lambda_psi)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be a non-negative number, got {v}")));
            }
        }
        let positive = [
            ("q_hat_v", self.q_hat_v),
            ("coverage_scale", self.coverage_scale),
            ("tau_cov", self.tau_cov),
            ("delta_psi", self.delta_psi),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("psi_dot_max", self.psi_dot_max),
            ("psi_ddot_max", self.psi_ddot_max),
            ("max_cluster_extent", self.max_cluster_extent),
            ("sampling.clearance", self.sampling.clearance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be positive, got {v}")));
            }
        }
        if self.min_cluster_size == 0 {
            return Err(Error::domain("min_cluster_size must be at least 1"));
        }
        let s = &self.sampling;
        if s.radii.is_empty() || s.radii.iter().any(|r| !(*r > 0.0)) || s.angles == 0 || s.max_candidates == 0 {
            return Err(Error::domain("sampling needs positive radii, angles and max_candidates"));
        }
        if !(s.min_height <= s.max_height) {
            return Err(Error::domain("sampling.min_height must not exceed sampling.max_height"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierCluster {
    /// Member voxels in ascending linear-index order.
    pub voxels: Vec<VoxelIndex>,
    pub centroid: Vec3,
    pub candidates: Vec<Viewpoint>,
}

impl FrontierCluster {
    fn from_voxels(grid: &VoxelGrid, mut voxels: Vec<VoxelIndex>) -> Self {
        voxels.sort_unstable_by_key(|v| grid.linear(*v));
        let sum: Vec3 = voxels.iter().map(|v| grid.center(*v)).sum();
        let centroid = sum / voxels.len() as f64;
        Self { voxels, centroid, candidates: Vec::new() }
    }
}

/// Free voxel with at least one unknown face neighbour.
pub fn is_frontier(grid: &VoxelGrid, idx: VoxelIndex) -> bool {
    grid.get(idx) == CellState::Free && grid.neighbors6(idx).any(|n| grid.get(n) == CellState::Unknown)
}

/// 26-connected components of frontier voxels, smallest first member first.
/// Components with fewer than `min_cluster_size` voxels are dropped.
pub fn detect_frontiers(grid: &VoxelGrid, min_cluster_size: usize) -> Vec<FrontierCluster> {
    let n = grid.len();
    let mut is_front = vec![false; n];
    for (i, flag) in is_front.iter_mut().enumerate() {
        if grid.get_linear(i) == CellState::Free {
            *flag = is_frontier(grid, grid.unlinear(i));
        }
    }
    let mut seen = vec![false; n];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !is_front[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            let idx = grid.unlinear(i);
            members.push(idx);
            for dz in -1..=1i64 {
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        if let Some(nb) = grid.offset(idx, [dx, dy, dz]) {
                            let j = grid.linear(nb);
                            if is_front[j] && !seen[j] {
                                seen[j] = true;
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
        }
        if members.len() >= min_cluster_size {
            clusters.push(FrontierCluster::from_voxels(grid, members));
        }
    }
    clusters
}

/// Recursively halve clusters whose horizontal extent exceeds `max_extent`,
/// cutting at the centroid across the wider axis.
pub fn split_clusters(clusters: Vec<FrontierCluster>, grid: &VoxelGrid, max_extent: f64) -> Vec<FrontierCluster> {
    let mut out = Vec::new();
    let mut stack: Vec<FrontierCluster> = clusters.into_iter().rev().collect();
    while let Some(c) = stack.pop() {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &c.voxels {
            let p = grid.center(*v);
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        let ext = hi - lo;
        let axis = if ext.x >= ext.y { 0 } else { 1 };
        if ext[axis] <= max_extent || c.voxels.len() < 2 {
            out.push(c);
            continue;
        }
        let (a, b): (Vec<_>, Vec<_>) = c.voxels.iter().partition(|v| grid.center(**v)[axis] < c.centroid[axis]);
        if a.is_empty() || b.is_empty() {
            out.push(c);
            continue;
        }
        stack.push(FrontierCluster::from_voxels(grid, b));
        stack.push(FrontierCluster::from_voxels(grid, a));
    }
    out
}

/// Every voxel in the index box of half-width `ceil(radius / res)` around `p` is known free.
pub fn has_clearance(grid: &VoxelGrid, p: &Vec3, radius: f64) -> bool {
    let Some(idx) = grid.index_of(p) else {
        return false;
    };
    let r = (radius / grid.resolution() - 1e-9).ceil().max(0.0) as i64;
    let lo = [idx[0] as i64 - r, idx[1] as i64 - r, idx[2] as i64 - r];
    let hi = [idx[0] as i64 + r, idx[1] as i64 + r, idx[2] as i64 + r];
    grid.box_all(lo, hi, CellState::Free)
}

/// Ring candidates around the cluster centroid, facing it, in known-free space
/// with clearance. Radius-major order, at most `max_candidates`.
pub fn sample_viewpoints(cluster: &FrontierCluster, grid: &VoxelGrid, sampling: &SamplingParams) -> Vec<Viewpoint> {
    let c = cluster.centroid;
    let z = c.z.clamp(sampling.min_height, sampling.max_height);
    let mut out = Vec::new();
    for r in &sampling.radii {
        for k in 0..sampling.angles {
            if out.len() >= sampling.max_candidates {
                return out;
            }
            let a = std::f64::consts::TAU * k as f64 / sampling.angles as f64;
            let p = Vec3::new(c.x + r * a.cos(), c.y + r * a.sin(), z);
            if has_clearance(grid, &p, sampling.clearance) {
                out.push(Viewpoint::new(p, (c.y - p.y).atan2(c.x - p.x)));
            }
        }
    }
    out
}

/// Inclusive index box enclosing the camera frustum, clipped to the grid.
fn frustum_index_box(vp: &Viewpoint, grid: &VoxelGrid, cam: &CameraModel) -> ([usize; 3], [usize; 3]) {
    let th = (cam.horizontal_fov / 2.0).tan();
    let tv = (cam.vertical_fov / 2.0).tan();
    let (s, c) = vp.yaw.sin_cos();
    let fwd = Vec3::new(c, s, 0.0);
    let left = Vec3::new(-s, c, 0.0);
    let mut lo = vp.position;
    let mut hi = vp.position;
    const K: usize = 8;
    for i in 0..=K {
        for j in 0..=K {
            let x = th * (2.0 * i as f64 / K as f64 - 1.0);
            let y = tv * (2.0 * j as f64 / K as f64 - 1.0);
            let p = vp.position + (fwd + left * x + Vec3::z() * y).normalize() * cam.max_range;
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
    }
    let res = grid.resolution();
    let dims = grid.dims();
    let o = grid.origin();
    let mut a = [0usize; 3];
    let mut b = [0usize; 3];
    for ax in 0..3 {
        let l = ((lo[ax] - o[ax]) / res).floor() as i64 - 1;
        let h = ((hi[ax] - o[ax]) / res).floor() as i64 + 1;
        a[ax] = l.clamp(0, dims[ax] as i64 - 1) as usize;
        b[ax] = h.clamp(0, dims[ax] as i64 - 1) as usize;
    }
    (a, b)
}

/// Visits unknown voxels in view until `f` returns false.
fn for_each_unknown_in_view(vp: &Viewpoint, grid: &VoxelGrid, cam: &CameraModel, mut f: impl FnMut(VoxelIndex, &Vec3) -> bool) {
    let (lo, hi) = frustum_index_box(vp, grid, cam);
    for z in lo[2]..=hi[2] {
        for y in lo[1]..=hi[1] {
            for x in lo[0]..=hi[0] {
                let idx = [x, y, z];
                if grid.get(idx) != CellState::Unknown {
                    continue;
                }
                let c = grid.center(idx);
                if cam.sees(vp, &c) && !f(idx, &c) {
                    return;
                }
            }
        }
    }
}

/// Unknown voxels (by centre) in range and field of view whose line of sight
/// crosses no occupied voxel.
pub fn coverage_utility(vp: &Viewpoint, grid: &VoxelGrid, cam: &CameraModel) -> usize {
    coverage_if_at_least(vp, grid, cam, 0, usize::MAX).expect("no threshold")
}

/// [`coverage_utility`], or `None` once it is certain to fall below `needed`
/// given that at most `bound` unknown voxels are in view.
fn coverage_if_at_least(vp: &Viewpoint, grid: &VoxelGrid, cam: &CameraModel, needed: usize, bound: usize) -> Option<usize> {
    let mut count = 0;
    let mut blocked = 0;
    let mut short = false;
    for_each_unknown_in_view(vp, grid, cam, |_, c| {
        if clear_up_to(grid, &vp.position, c) {
            count += 1;
        } else {
            blocked += 1;
            if bound.saturating_sub(blocked) < needed {
                short = true;
                return false;
            }
        }
        true
    });
    (!short && count >= needed).then_some(count)
}

/// Unknown voxels in range and field of view, ignoring occlusion; an upper bound on [`coverage_utility`].
pub fn coverage_upper_bound(vp: &Viewpoint, grid: &VoxelGrid, cam: &CameraModel) -> usize {
    let mut count = 0;
    for_each_unknown_in_view(vp, grid, cam, |_, _| {
        count += 1;
        true
    });
    count
}

/// Summed score of mapped features visible from `vp`.
pub fn feature_utility(vp: &Viewpoint, fm: &FeatureMap, grid: &VoxelGrid, cam: &CameraModel) -> f64 {
    fm.score_sum(&visible_features(fm, grid, vp, cam))
}

pub fn score_viewpoint(vp: &Viewpoint, current: &Viewpoint, q_c: usize, q_v: f64, params: &PlannerParams) -> f64 {
    let dist = (vp.position - current.position).norm();
    let feature = if params.mode.perception_aware_frontier() { params.w_v * (q_v - params.q_hat_v).tanh() } else { 0.0 };
    -params.w_d * dist + params.w_c * params.coverage_scale * q_c as f64 + feature
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub viewpoint: Viewpoint,
    pub cluster: usize,
    pub score: f64,
    pub distance: f64,
    pub coverage: usize,
    pub feature_utility: f64,
}

/// `Greater` when `a` is preferred: higher score, then shorter distance, then lower index.
fn preference(a: (f64, f64, usize), b: (f64, f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)).then(b.2.cmp(&a.2))
}

/// Index of the highest-scoring candidate with the distance/index tie-break.
pub fn select_subgoal(candidates: &[ScoredCandidate]) -> Option<usize> {
    (0..candidates.len()).max_by(|&i, &j| {
        preference((candidates[i].score, candidates[i].distance, i), (candidates[j].score, candidates[j].distance, j))
    })
}

/// Score every candidate of every cluster, in cluster then candidate order.
pub fn score_all(
    clusters: &[FrontierCluster],
    grid: &VoxelGrid,
    fm: &FeatureMap,
    cam: &CameraModel,
    current: &Viewpoint,
    params: &PlannerParams,
) -> Vec<ScoredCandidate> {
    let mut out = Vec::new();
    for (ci, cluster) in clusters.iter().enumerate() {
        for vp in &cluster.candidates {
            let q_c = coverage_utility(vp, grid, cam);
            let q_v = feature_utility(vp, fm, grid, cam);
            out.push(ScoredCandidate {
                viewpoint: *vp,
                cluster: ci,
                score: score_viewpoint(vp, current, q_c, q_v, params),
                distance: (vp.position - current.position).norm(),
                coverage: q_c,
                feature_utility: q_v,
            });
        }
    }
    out
}

/// Per-row prefix counts of unknown cells along x.
pub struct UnknownRows {
    dims: [usize; 3],
    sums: Vec<u32>,
}

impl UnknownRows {
    pub fn new(grid: &VoxelGrid) -> Self {
        let dims = grid.dims();
        let stride = dims[0] + 1;
        let mut sums = vec![0u32; stride * dims[1] * dims[2]];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                let row = (z * dims[1] + y) * stride;
                for x in 0..dims[0] {
                    sums[row + x + 1] = sums[row + x] + (grid.get([x, y, z]) == CellState::Unknown) as u32;
                }
            }
        }
        Self { dims, sums }
    }

    /// Unknown voxels whose centre is in range and field of view, occlusion
    /// ignored. Interval ends are padded, so this never undercounts
    /// [`coverage_upper_bound`].
    pub fn in_view(&self, vp: &Viewpoint, grid: &VoxelGrid, cam: &CameraModel) -> usize {
        const PAD: f64 = 1e-9;
        let th = (cam.horizontal_fov / 2.0).tan();
        let tv = (cam.vertical_fov / 2.0).tan();
        let (s, c) = vp.yaw.sin_cos();
        let (res, o) = (grid.resolution(), grid.origin());
        let r2 = cam.max_range * cam.max_range;
        let (lo, hi) = frustum_index_box(vp, grid, cam);
        let stride = self.dims[0] + 1;
        let x0 = o.x + 0.5 * res - vp.position.x;
        let mut total = 0usize;
        for z in lo[2]..=hi[2] {
            let dz = o.z + (z as f64 + 0.5) * res - vp.position.z;
            for y in lo[1]..=hi[1] {
                let dy = o.y + (y as f64 + 0.5) * res - vp.position.y;
                let rest = r2 - dy * dy - dz * dz;
                if rest < -PAD {
                    continue;
                }
                let reach = rest.max(0.0).sqrt() + PAD;
                let (mut l, mut h) = (-reach, reach);
                // Each constraint reads a·dx + b >= 0 with dx the x offset from the camera.
                let fx = (c, s * dy);
                let fy = (-s, c * dy);
                let cons = [
                    fx,
                    (th * fx.0 - fy.0, th * fx.1 - fy.1),
                    (th * fx.0 + fy.0, th * fx.1 + fy.1),
                    (tv * fx.0, tv * fx.1 - dz),
                    (tv * fx.0, tv * fx.1 + dz),
                ];
                for (ca, cb) in cons {
                    if ca.abs() < 1e-12 {
                        if cb < -PAD {
                            h = f64::NEG_INFINITY;
                        }
                    } else if ca > 0.0 {
                        l = l.max(-cb / ca - PAD);
                    } else {
                        h = h.min(-cb / ca + PAD);
                    }
                }
                if l > h {
                    continue;
                }
                let i0 = ((l - x0) / res).ceil().max(lo[0] as f64);
                let i1 = ((h - x0) / res).floor().min(hi[0] as f64);
                if i0 > i1 {
                    continue;
                }
                let row = (z * self.dims[1] + y) * stride;
                total += (self.sums[row + i1 as usize + 1] - self.sums[row + i0 as usize]) as usize;
            }
        }
        total
    }
}

/// Same choice as `select_subgoal` over the candidates of `score_all(..)` with
/// coverage at least `params.min_coverage`. Exact coverage is computed only for
/// candidates whose bounds can still win.
pub fn select_best(
    clusters: &[FrontierCluster],
    grid: &VoxelGrid,
    fm: &FeatureMap,
    cam: &CameraModel,
    current: &Viewpoint,
    params: &PlannerParams,
) -> Option<ScoredCandidate> {
    struct Pending {
        order: usize,
        vp: Viewpoint,
        cluster: usize,
        q_v: f64,
        in_view: usize,
        bound: f64,
    }
    impl PartialEq for Pending {
        fn eq(&self, o: &Self) -> bool {
            self.cmp(o) == Ordering::Equal
        }
    }
    impl Eq for Pending {}
    impl PartialOrd for Pending {
        fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Pending {
        fn cmp(&self, o: &Self) -> Ordering {
            self.bound.total_cmp(&o.bound).then(o.order.cmp(&self.order))
        }
    }
    let rows = UnknownRows::new(grid);
    let mut heap = std::collections::BinaryHeap::new();
    let all = clusters.iter().enumerate().flat_map(|(ci, c)| c.candidates.iter().map(move |vp| (ci, vp)));
    for (order, (cluster, vp)) in all.enumerate() {
        let in_view = rows.in_view(vp, grid, cam);
        if in_view < params.min_coverage {
            continue;
        }
        let q_v = if params.mode.perception_aware_frontier() { feature_utility(vp, fm, grid, cam) } else { 0.0 };
        let bound = score_viewpoint(vp, current, in_view, q_v, params);
        heap.push(Pending { order, vp: *vp, cluster, q_v, in_view, bound });
    }
    let mut best: Option<(ScoredCandidate, usize)> = None;
    while let Some(p) = heap.pop() {
        if let Some((b, _)) = &best {
            if p.bound < b.score {
                break;
            }
        }
        // Smallest coverage that can still tie the incumbent's score.
        let needed = match &best {
            None => params.min_coverage,
            Some((b, _)) => {
                let (mut lo, mut hi) = (0, p.in_view);
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if score_viewpoint(&p.vp, current, mid, p.q_v, params) >= b.score {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                lo.max(params.min_coverage)
            }
        };
        let Some(q_c) = coverage_if_at_least(&p.vp, grid, cam, needed, p.in_view) else {
            continue;
        };
        let cand = ScoredCandidate {
            viewpoint: p.vp,
            cluster: p.cluster,
            score: score_viewpoint(&p.vp, current, q_c, p.q_v, params),
            distance: (p.vp.position - current.position).norm(),
            coverage: q_c,
            feature_utility: p.q_v,
        };
        let better = match &best {
            None => true,
            Some((b, bi)) => preference((cand.score, cand.distance, p.order), (b.score, b.distance, *bi)) == Ordering::Greater,
        };
        if better {
            best = Some((cand, p.order));
        }
    }
    best.map(|(c, _)| c)
}
