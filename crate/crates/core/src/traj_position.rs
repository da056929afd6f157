//! Reference path, box corridor and minimum-snap position trajectory.
//!
//! Segments are septic Bézier curves. Each axis is an independent QP:
//! minimise integrated squared snap subject to boundary states, C³ joints,
//! control points inside the segment's corridor box, and hodograph bounds of
//! `v_max/√3` and `a_max/√3` per axis.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bezier::{hodograph_matrix, snap_cost_matrix, BezierSegment, PiecewiseBezier};
use crate::error::ConstraintClass;
use crate::qp::{solve_qp, ConstraintRef, QpError, QuadraticProgram};
use crate::world::{Aabb, CellState, VoxelGrid, VoxelIndex};
use crate::{Error, Result, Vec3};

pub const POSITION_ORDER: usize = 7;
/// Derivatives matched at joints (position through jerk).
const JOINT_DERIVATIVES: usize = 4;
const QP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorridorParams {
    /// Longer path edges are split into equal pieces.
    pub max_segment_length: f64,
    pub max_inflation: f64,
    /// Boxes are shrunk by this much on every face (but always keep their endpoints).
    pub margin: f64,
    /// Fraction of the per-axis limits used for time allocation.
    pub time_scale: f64,
    /// Duration multiplier applied on each infeasible retry.
    pub retry_dilation: f64,
    pub max_retries: usize,
}

impl Default for CorridorParams {
    fn default() -> Self {
        Self { max_segment_length: 2.0, max_inflation: 1.0, margin: 0.01, time_scale: 0.6, retry_dilation: 1.5, max_retries: 4 }
    }
}

impl CorridorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_segment_length > 0.0 && self.max_inflation >= 0.0 && self.margin >= 0.0) {
            return Err(Error::domain("corridor lengths must be positive"));
        }
        if !(self.time_scale > 0.0 && self.time_scale <= 1.0) {
            return Err(Error::domain("corridor.time_scale must lie in (0, 1]"));
        }
        if !(self.retry_dilation > 1.0) {
            return Err(Error::domain("corridor.retry_dilation must exceed 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub boxes: Vec<Aabb>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
}

impl BoundaryState {
    pub fn at_rest(position: Vec3) -> Self {
        Self { position, velocity: Vec3::zeros(), acceleration: Vec3::zeros() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionTrajectory {
    curve: PiecewiseBezier<Vec3>,
    velocity: Vec<BezierSegment<Vec3>>,
    acceleration: Vec<BezierSegment<Vec3>>,
    pub start: BoundaryState,
    pub goal: BoundaryState,
}

impl PositionTrajectory {
    pub fn new(curve: PiecewiseBezier<Vec3>, start: BoundaryState, goal: BoundaryState) -> Result<Self> {
        let velocity = curve.derivative()?;
        let acceleration = velocity.iter().map(|s| s.derivative()).collect::<Result<Vec<_>>>()?;
        Ok(Self { curve, velocity, acceleration, start, goal })
    }

    pub fn curve(&self) -> &PiecewiseBezier<Vec3> {
        &self.curve
    }

    pub fn start_time(&self) -> f64 {
        self.curve.start_time()
    }

    pub fn end_time(&self) -> f64 {
        self.curve.end_time()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.curve.durations()
    }

    pub fn position(&self, t: f64) -> Vec3 {
        self.curve.eval(t)
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        crate::bezier::eval_segments(&self.velocity, self.start_time(), t)
    }

    pub fn acceleration(&self, t: f64) -> Vec3 {
        crate::bezier::eval_segments(&self.acceleration, self.start_time(), t)
    }

    pub fn state(&self, t: f64) -> BoundaryState {
        BoundaryState { position: self.position(t), velocity: self.velocity(t), acceleration: self.acceleration(t) }
    }

    /// Same path with every duration multiplied by `factor`.
    pub fn dilated(&self, factor: f64) -> Result<Self> {
        let mut start = self.start;
        start.velocity /= factor;
        start.acceleration /= factor * factor;
        Self::new(self.curve.dilated(factor)?, start, self.goal)
    }
}

/// Free voxel whose 26-neighbourhood is entirely free.
fn is_safe(grid: &VoxelGrid, idx: VoxelIndex) -> bool {
    let lo = [idx[0] as i64 - 1, idx[1] as i64 - 1, idx[2] as i64 - 1];
    let hi = [idx[0] as i64 + 1, idx[1] as i64 + 1, idx[2] as i64 + 1];
    grid.box_all(lo, hi, CellState::Free)
}

fn index_box(a: VoxelIndex, b: VoxelIndex, pad: i64) -> ([i64; 3], [i64; 3]) {
    let mut lo = [0i64; 3];
    let mut hi = [0i64; 3];
    for ax in 0..3 {
        lo[ax] = a[ax].min(b[ax]) as i64 - pad;
        hi[ax] = a[ax].max(b[ax]) as i64 + pad;
    }
    (lo, hi)
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    node: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A* over safe voxels (start and goal only need to be free) with 26-connectivity
/// and no corner cutting: every voxel in the bounding box of a move must be traversable.
pub fn grid_search(grid: &VoxelGrid, start: VoxelIndex, goal: VoxelIndex) -> Result<Vec<VoxelIndex>> {
    let fail = || Error::NoPath { start, goal };
    if grid.get(start) != CellState::Free || grid.get(goal) != CellState::Free {
        return Err(Error::domain("path endpoints must be known free"));
    }
    let n = grid.len();
    let s = grid.linear(start);
    let g = grid.linear(goal);
    let mut traversable = vec![0u8; n];
    let mut passable = |grid: &VoxelGrid, i: usize| -> bool {
        if traversable[i] == 0 {
            let ok = i == s || i == g || is_safe(grid, grid.unlinear(i));
            traversable[i] = if ok { 1 } else { 2 };
        }
        traversable[i] == 1
    };
    let goal_p = grid.center(goal);
    let h = |i: VoxelIndex| (grid.center(i) - goal_p).norm() / grid.resolution();
    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    cost[s] = 0.0;
    heap.push(Open { f: h(start), node: s });
    while let Some(Open { node, .. }) = heap.pop() {
        if closed[node] {
            continue;
        }
        closed[node] = true;
        if node == g {
            let mut path = vec![goal];
            let mut cur = g;
            while cur != s {
                cur = parent[cur];
                path.push(grid.unlinear(cur));
            }
            path.reverse();
            return Ok(path);
        }
        let idx = grid.unlinear(node);
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 && dz == 0 {
                        continue;
                    }
                    let Some(nb) = grid.offset(idx, [dx, dy, dz]) else { continue };
                    let j = grid.linear(nb);
                    if closed[j] {
                        continue;
                    }
                    let (lo, hi) = index_box(idx, nb, 0);
                    let mut ok = true;
                    'scan: for z in lo[2]..=hi[2] {
                        for y in lo[1]..=hi[1] {
                            for x in lo[0]..=hi[0] {
                                if !passable(grid, grid.linear([x as usize, y as usize, z as usize])) {
                                    ok = false;
                                    break 'scan;
                                }
                            }
                        }
                    }
                    if !ok {
                        continue;
                    }
                    let step = ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                    let c = cost[node] + step;
                    if c < cost[j] {
                        cost[j] = c;
                        parent[j] = node;
                        heap.push(Open { f: c + h(nb), node: j });
                    }
                }
            }
        }
    }
    Err(fail())
}

/// Waypoints from `start` to `goal` through known-free space. Voxel steps are
/// merged greedily while the voxel box of the merged edge, grown by one voxel,
/// stays known free.
pub fn plan_path(grid: &VoxelGrid, start: &Vec3, goal: &Vec3) -> Result<Vec<Vec3>> {
    let (Some(si), Some(gi)) = (grid.index_of(start), grid.index_of(goal)) else {
        return Err(Error::domain("path endpoints outside the grid"));
    };
    if si == gi {
        return if start == goal { Ok(vec![*start]) } else { Ok(vec![*start, *goal]) };
    }
    let cells = grid_search(grid, si, gi)?;
    let mut keep = vec![0usize];
    let mut i = 0;
    while i + 1 < cells.len() {
        let mut j = i + 1;
        while j + 1 < cells.len() {
            let (lo, hi) = index_box(cells[i], cells[j + 1], 1);
            if !grid.box_all(lo, hi, CellState::Free) {
                break;
            }
            j += 1;
        }
        keep.push(j);
        i = j;
    }
    let last = keep.len() - 1;
    Ok(keep
        .iter()
        .enumerate()
        .map(|(k, &c)| match k {
            0 => *start,
            k if k == last => *goal,
            _ => grid.center(cells[c]),
        })
        .collect())
}

/// Split edges longer than `max_len` into equal pieces.
pub fn subdivide(path: &[Vec3], max_len: f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(path.len());
    if let Some(first) = path.first() {
        out.push(*first);
    }
    for w in path.windows(2) {
        let pieces = ((w[1] - w[0]).norm() / max_len).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            out.push(w[0] + (w[1] - w[0]) * (k as f64 / pieces as f64));
        }
    }
    out
}

/// One box per edge: the edge's voxel box (grown by one voxel when that stays
/// free) inflated face by face, round robin, through known-free layers up to
/// `max_inflation`, then shrunk by `margin` while still containing the edge.
pub fn build_corridor(path: &[Vec3], grid: &VoxelGrid, params: &CorridorParams) -> Result<Corridor> {
    if path.len() < 2 {
        return Err(Error::domain("a corridor needs at least two waypoints"));
    }
    let res = grid.resolution();
    let limit = (params.max_inflation / res + 1e-9).floor() as i64;
    let mut boxes = Vec::with_capacity(path.len() - 1);
    for (e, w) in path.windows(2).enumerate() {
        let (Some(a), Some(b)) = (grid.index_of(&w[0]), grid.index_of(&w[1])) else {
            return Err(Error::domain("path leaves the grid"));
        };
        let (mut lo, mut hi) = index_box(a, b, 1);
        if !grid.box_all(lo, hi, CellState::Free) {
            (lo, hi) = index_box(a, b, 0);
            if !grid.box_all(lo, hi, CellState::Free) {
                return Err(Error::CorridorCollapsed { index: e });
            }
        }
        let mut grown = [0i64; 6];
        loop {
            let mut any = false;
            for face in 0..6 {
                if grown[face] >= limit {
                    continue;
                }
                let ax = face / 2;
                let (mut l, mut h) = (lo, hi);
                if face % 2 == 0 {
                    l[ax] -= 1;
                    h[ax] = l[ax];
                } else {
                    h[ax] += 1;
                    l[ax] = h[ax];
                }
                if grid.box_all(l, h, CellState::Free) {
                    if face % 2 == 0 {
                        lo[ax] -= 1;
                    } else {
                        hi[ax] += 1;
                    }
                    grown[face] += 1;
                    any = true;
                } else {
                    grown[face] = limit;
                }
            }
            if !any {
                break;
            }
        }
        let o = grid.origin();
        let mut min = Vec3::new(lo[0] as f64, lo[1] as f64, lo[2] as f64) * res + o;
        let mut max = Vec3::new((hi[0] + 1) as f64, (hi[1] + 1) as f64, (hi[2] + 1) as f64) * res + o;
        min = min.add_scalar(params.margin);
        max = max.add_scalar(-params.margin);
        for p in w {
            min = min.inf(p);
            max = max.sup(p);
        }
        let bx = Aabb::new(min, max);
        if bx.volume() < 1e-12 {
            return Err(Error::CorridorCollapsed { index: e });
        }
        boxes.push(bx);
    }
    Ok(Corridor { boxes })
}

/// Trapezoidal-profile duration per edge, floored at 0.5 s.
pub fn allocate_times(path: &[Vec3], v_max: f64, a_max: f64) -> Vec<f64> {
    path.windows(2)
        .map(|w| {
            let len = (w[1] - w[0]).norm();
            let t = if len >= v_max * v_max / a_max { len / v_max + v_max / a_max } else { 2.0 * (len / a_max).sqrt() };
            t.max(0.5)
        })
        .collect()
}

struct AxisRows {
    eq: Vec<(Vec<(usize, f64)>, f64)>,
    boundary_rows: usize,
    ineq: Vec<(Vec<(usize, f64)>, f64)>,
    corridor_rows: usize,
}

fn dense(rows: &[(Vec<(usize, f64)>, f64)], n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(rows.len(), n);
    let mut b = DVector::zeros(rows.len());
    for (r, (coeffs, rhs)) in rows.iter().enumerate() {
        for (c, v) in coeffs {
            a[(r, *c)] += v;
        }
        b[r] = *rhs;
    }
    (a, b)
}

fn axis_rows(
    ax: usize,
    corridor: &Corridor,
    times: &[f64],
    start: &BoundaryState,
    goal: &BoundaryState,
    v_bound: f64,
    a_bound: f64,
) -> AxisRows {
    let n = POSITION_ORDER;
    let m = times.len();
    let var = |seg: usize, k: usize| seg * (n + 1) + k;
    let mut eq = Vec::new();
    let derivative_row = |seg: usize, r: usize, at_end: bool| -> Vec<(usize, f64)> {
        let d = hodograph_matrix(n, r, times[seg]);
        let row = if at_end { d.nrows() - 1 } else { 0 };
        (0..=n).filter(|&k| d[(row, k)] != 0.0).map(|k| (var(seg, k), d[(row, k)])).collect()
    };
    let start_vals = [start.position[ax], start.velocity[ax], start.acceleration[ax]];
    let goal_vals = [goal.position[ax], goal.velocity[ax], goal.acceleration[ax]];
    for (r, v) in start_vals.iter().enumerate() {
        eq.push((derivative_row(0, r, false), *v));
    }
    for (r, v) in goal_vals.iter().enumerate() {
        eq.push((derivative_row(m - 1, r, true), *v));
    }
    let boundary_rows = eq.len();
    for j in 0..m.saturating_sub(1) {
        for r in 0..JOINT_DERIVATIVES {
            let mut row = derivative_row(j, r, true);
            row.extend(derivative_row(j + 1, r, false).into_iter().map(|(c, v)| (c, -v)));
            eq.push((row, 0.0));
        }
    }
    let mut ineq = Vec::new();
    for (j, bx) in corridor.boxes.iter().enumerate() {
        for k in 0..=n {
            ineq.push((vec![(var(j, k), -1.0)], -bx.min[ax]));
            ineq.push((vec![(var(j, k), 1.0)], bx.max[ax]));
        }
    }
    let corridor_rows = ineq.len();
    for (j, &t) in times.iter().enumerate() {
        for (r, bound) in [(1, v_bound), (2, a_bound)] {
            let d = hodograph_matrix(n, r, t);
            for row in 0..d.nrows() {
                let coeffs: Vec<(usize, f64)> = (0..=n).filter(|&k| d[(row, k)] != 0.0).map(|k| (var(j, k), d[(row, k)])).collect();
                ineq.push((coeffs.clone(), bound));
                ineq.push((coeffs.into_iter().map(|(c, v)| (c, -v)).collect(), bound));
            }
        }
    }
    AxisRows { eq, boundary_rows, ineq, corridor_rows }
}

/// Minimum-snap trajectory through the corridor with the given segment durations.
pub fn optimize_position(
    corridor: &Corridor,
    times: &[f64],
    start: &BoundaryState,
    goal: &Vec3,
    v_max: f64,
    a_max: f64,
    start_time: f64,
) -> Result<PositionTrajectory> {
    let m = times.len();
    if m == 0 || m != corridor.boxes.len() {
        return Err(Error::domain(format!("{} durations for {} corridor boxes", m, corridor.boxes.len())));
    }
    if times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::domain("segment durations must be positive"));
    }
    let n = POSITION_ORDER;
    let dim = m * (n + 1);
    let goal_state = BoundaryState::at_rest(*goal);
    let sqrt3 = 3f64.sqrt();
    let (v_bound, a_bound) = (v_max / sqrt3, a_max / sqrt3);
    let mut hessian = DMatrix::zeros(dim, dim);
    for (j, &t) in times.iter().enumerate() {
        let h = snap_cost_matrix(n, t);
        hessian.view_mut((j * (n + 1), j * (n + 1)), (n + 1, n + 1)).copy_from(&h);
    }
    let mut coords: Vec<Vec<f64>> = vec![Vec::with_capacity(dim); 3];
    for ax in 0..3 {
        let rows = axis_rows(ax, corridor, times, start, &goal_state, v_bound, a_bound);
        let (ae, be) = dense(&rows.eq, dim);
        let (ai, bi) = dense(&rows.ineq, dim);
        let qp = QuadraticProgram::new(hessian.clone(), DVector::zeros(dim)).with_equalities(ae, be).with_inequalities(ai, bi);
        let total: f64 = times.iter().sum();
        let mut elapsed = 0.0;
        let mut x0 = DVector::zeros(dim);
        for (j, &t) in times.iter().enumerate() {
            for k in 0..=n {
                let s = (elapsed + t * k as f64 / n as f64) / total;
                x0[j * (n + 1) + k] = start.position[ax] + (goal[ax] - start.position[ax]) * s;
            }
            elapsed += t;
        }
        let sol = solve_qp(&qp, &x0, QP_TOL).map_err(|e| match e {
            QpError::Infeasible { constraint } => Error::TrajectoryInfeasible {
                class: match constraint {
                    Some(ConstraintRef::Equality(i)) if i < rows.boundary_rows => ConstraintClass::Boundary,
                    Some(ConstraintRef::Equality(_)) => ConstraintClass::Continuity,
                    Some(ConstraintRef::Inequality(i)) if i < rows.corridor_rows => ConstraintClass::Corridor,
                    Some(ConstraintRef::Inequality(_)) => ConstraintClass::Dynamics,
                    None => ConstraintClass::Unknown,
                },
            },
            other => Error::Qp(other),
        })?;
        coords[ax] = sol.x.iter().copied().collect();
    }
    let mut segments = Vec::with_capacity(m);
    for (j, &t) in times.iter().enumerate() {
        let pts: Vec<Vec3> = (0..=n)
            .map(|k| {
                let i = j * (n + 1) + k;
                Vec3::new(coords[0][i], coords[1][i], coords[2][i])
            })
            .collect();
        segments.push(BezierSegment::new(pts, t)?);
    }
    // Pin the exact boundary values against solver round-off.
    let first = segments[0].control_points()[0];
    if (first - start.position).norm() < 1e-6 {
        let mut pts = segments[0].control_points().to_vec();
        pts[0] = start.position;
        segments[0] = BezierSegment::new(pts, times[0])?;
    }
    let last_seg = m - 1;
    let mut pts = segments[last_seg].control_points().to_vec();
    if (pts[n] - goal).norm() < 1e-6 {
        pts[n] = *goal;
        segments[last_seg] = BezierSegment::new(pts, times[last_seg])?;
    }
    for j in 0..m.saturating_sub(1) {
        let joint = segments[j].last();
        let mut next = segments[j + 1].control_points().to_vec();
        next[0] = joint;
        segments[j + 1] = BezierSegment::new(next, times[j + 1])?;
    }
    PositionTrajectory::new(PiecewiseBezier::new(segments, start_time)?, *start, goal_state)
}

/// Path, corridor, time allocation and QP, retrying with longer durations and
/// finally from rest when the program is infeasible.
pub fn plan_trajectory(
    grid: &VoxelGrid,
    start: &BoundaryState,
    goal: &Vec3,
    v_max: f64,
    a_max: f64,
    params: &CorridorParams,
    start_time: f64,
) -> Result<(PositionTrajectory, Corridor)> {
    if (goal - start.position).norm() < 1e-9 && start.velocity.norm() < 1e-12 && start.acceleration.norm() < 1e-12 {
        let seg = BezierSegment::new(vec![*goal; POSITION_ORDER + 1], 0.5)?;
        let traj = PositionTrajectory::new(PiecewiseBezier::new(vec![seg], start_time)?, *start, BoundaryState::at_rest(*goal))?;
        let corridor = Corridor { boxes: vec![Aabb::new(*goal, *goal)] };
        return Ok((traj, corridor));
    }
    let coarse = plan_path(grid, &start.position, goal)?;
    let mut path = subdivide(&coarse, params.max_segment_length);
    if path.len() < 2 {
        path.push(*goal);
    }
    let corridor = build_corridor(&path, grid, params)?;
    let sqrt3 = 3f64.sqrt();
    let base = allocate_times(&path, params.time_scale * v_max / sqrt3, params.time_scale * a_max / sqrt3);
    let mut last_err = None;
    for from_rest in [false, true] {
        let s = if from_rest { BoundaryState::at_rest(start.position) } else { *start };
        let mut times = base.clone();
        for _ in 0..=params.max_retries {
            match optimize_position(&corridor, &times, &s, goal, v_max, a_max, start_time) {
                Ok(t) => return Ok((t, corridor)),
                Err(e @ (Error::TrajectoryInfeasible { .. } | Error::Qp(_))) => last_err = Some(e),
                Err(e) => return Err(e),
            }
            times.iter_mut().for_each(|t| *t *= params.retry_dilation);
        }
        if start.velocity.norm() < 1e-12 && start.acceleration.norm() < 1e-12 {
            break;
        }
    }
    Err(last_err.unwrap_or(Error::TrajectoryInfeasible { class: ConstraintClass::Unknown }))
}
