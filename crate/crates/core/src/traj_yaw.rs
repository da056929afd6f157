//! Covisibility yaw waypoints and the continuous yaw optimisation.
//!
//! Yaw segments are quartic Bézier curves sharing the position trajectory's
//! durations. The objective
//!
//! ```text
//! J = Σ_j ∫ Σ_{f_i ∈ F_j} s_i (ψ̂_{j,i}(t) − ψ̇_j(t))² dt + λ_ψ Σ_j ∫ ψ̇_j(t)² dt
//! ```
//!
//! is quadratic in the control points because ψ̇ is linear in them, so the
//! constrained problem is a single convex QP. Angles are handled on a lifted
//! (unwrapped) branch and wrapped only on output.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::bezier::{bernstein_basis, derivative_cost_matrix, hodograph_matrix, BezierSegment, PiecewiseBezier};
use crate::error::ConstraintClass;
use crate::frontier::PlannerParams;
use crate::qp::{solve_qp, QpError, QuadraticProgram};
use crate::traj_position::PositionTrajectory;
use crate::world::{intersect_sorted, visible_features, CameraModel, Feature, FeatureId, FeatureMap, Viewpoint, VoxelGrid};
use crate::{unwrap_near, wrap_angle, Error, Result, Vec3};

pub const YAW_ORDER: usize = 4;
pub const QUADRATURE_NODES: usize = 16;
/// Horizontal distance below which a feature's bearing is undefined.
pub const DEGENERATE_DISTANCE: f64 = 1e-6;
/// Attempts per joint before Alg. 1 falls back to interpolation.
pub const MAX_SAMPLING_ATTEMPTS: usize = 11;
const QP_TOL: f64 = 1e-9;

/// Time derivative of the horizontal bearing `atan2(d_y, d_x)` to a static
/// feature `f` seen from `p` moving with velocity `v`.
pub fn desired_yaw_rate(p: &Vec3, v: &Vec3, f: &Vec3) -> Result<f64> {
    let d = f - p;
    let h2 = d.x * d.x + d.y * d.y;
    if h2.sqrt() <= DEGENERATE_DISTANCE {
        return Err(Error::DegenerateFeature { distance: h2.sqrt() });
    }
    Ok((d.y * v.x - d.x * v.y) / h2)
}

/// Gauss–Legendre nodes and weights on [−1, 1] via the Golub–Welsch eigenproblem.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for i in 0..n / 2 {
        let x = 0.5 * (pairs[n - 1 - i].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[n - 1 - i].1);
        pairs[i] = (-x, w);
        pairs[n - 1 - i] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// Inputs shared by covisibility sampling and the optimiser.
#[derive(Debug, Clone, Copy)]
pub struct YawPlanInput<'a> {
    pub position: &'a PositionTrajectory,
    pub psi_c: f64,
    pub psi_g: f64,
    pub features: &'a FeatureMap,
    pub grid: &'a VoxelGrid,
    pub camera: &'a CameraModel,
    pub params: &'a PlannerParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovisibilityResult {
    /// Lifted yaw at the end of every segment; the last entry is the goal yaw.
    pub waypoint_yaws: Vec<f64>,
    /// Covisible features per segment; the last segment's set is empty.
    pub covisible_sets: Vec<Vec<Feature>>,
    /// Candidate-yaw visibility evaluations per joint.
    pub evaluations_per_joint: Vec<usize>,
    pub visibility_calls: usize,
}

/// Alg. 1 (covisibility sampling) on the lifted branch of `psi_c`; candidate
/// yaws step toward the goal.
pub fn covisibility_sampling(input: &YawPlanInput) -> CovisibilityResult {
    let segs = input.position.curve().segments();
    let m = segs.len();
    let psi_g = unwrap_near(input.psi_g, input.psi_c);
    let params = input.params;
    let mut calls = 0usize;
    let mut vis = |p: Vec3, psi: f64| {
        calls += 1;
        visible_features(input.features, input.grid, &Viewpoint::new(p, psi), input.camera)
    };
    let mut psi_last = input.psi_c;
    let mut yaws = Vec::with_capacity(m);
    let mut sets = Vec::with_capacity(m);
    let mut per_joint = Vec::with_capacity(m.saturating_sub(1));
    for j in 1..m {
        let v_last = vis(segs[j - 1].first(), psi_last);
        let mut psi_s = psi_last;
        let mut k = 0usize;
        let mut evaluations = 0usize;
        loop {
            let v_s = vis(segs[j].first(), psi_s);
            evaluations += 1;
            let rep: Vec<FeatureId> = intersect_sorted(&v_s, &v_last);
            let w_cov = input.features.score_sum(&rep);
            if w_cov > params.tau_cov {
                sets.push(rep.iter().filter_map(|id| input.features.get(*id).copied()).collect());
                yaws.push(psi_s);
                psi_last = psi_s;
                break;
            }
            psi_s += if psi_g > psi_last { params.delta_psi } else { -params.delta_psi };
            k += 1;
            if k > 10 {
                let psi_j = psi_last + (psi_g - psi_last) * j as f64 / m as f64;
                sets.push(Vec::new());
                yaws.push(psi_j);
                psi_last = psi_j;
                break;
            }
        }
        per_joint.push(evaluations);
    }
    yaws.push(psi_g);
    sets.push(Vec::new());
    CovisibilityResult { waypoint_yaws: yaws, covisible_sets: sets, evaluations_per_joint: per_joint, visibility_calls: calls }
}

/// Uniform duration factor (≥ 1) that makes every waypoint-to-waypoint average
/// yaw rate strictly feasible.
pub fn required_dilation(psi_c: f64, waypoint_yaws: &[f64], durations: &[f64], psi_dot_max: f64) -> f64 {
    let mut prev = psi_c;
    let mut factor: f64 = 1.0;
    for (psi, t) in waypoint_yaws.iter().zip(durations) {
        factor = factor.max((psi - prev).abs() / (0.999 * psi_dot_max * t));
        prev = *psi;
    }
    factor
}

#[derive(Debug, Clone, PartialEq)]
pub struct YawTrajectory {
    curve: PiecewiseBezier<f64>,
    rate: Vec<BezierSegment<f64>>,
    accel: Vec<BezierSegment<f64>>,
    pub waypoint_yaws: Vec<f64>,
    pub covisible_sets: Vec<Vec<Feature>>,
    /// Factor applied to the position durations to respect the yaw-rate limit.
    pub dilation: f64,
    /// Total objective `J_percept + λ_ψ J_smooth` at the returned curve.
    pub objective: f64,
}

impl YawTrajectory {
    fn new(
        curve: PiecewiseBezier<f64>,
        cov: &CovisibilityResult,
        dilation: f64,
        objective: f64,
    ) -> Result<Self> {
        let rate = curve.derivative()?;
        let accel = rate.iter().map(|s| s.derivative()).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            curve,
            rate,
            accel,
            waypoint_yaws: cov.waypoint_yaws.clone(),
            covisible_sets: cov.covisible_sets.clone(),
            dilation,
            objective,
        })
    }

    pub fn curve(&self) -> &PiecewiseBezier<f64> {
        &self.curve
    }

    pub fn start_time(&self) -> f64 {
        self.curve.start_time()
    }

    pub fn end_time(&self) -> f64 {
        self.curve.end_time()
    }

    /// Yaw wrapped into (−π, π].
    pub fn yaw(&self, t: f64) -> f64 {
        wrap_angle(self.curve.eval(t))
    }

    pub fn yaw_lifted(&self, t: f64) -> f64 {
        self.curve.eval(t)
    }

    pub fn rate(&self, t: f64) -> f64 {
        crate::bezier::eval_segments(&self.rate, self.start_time(), t)
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        crate::bezier::eval_segments(&self.accel, self.start_time(), t)
    }

    /// Control points of all segments, segment-major.
    pub fn control_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.curve.segment_count() * (YAW_ORDER + 1),
            self.curve.segments().iter().flat_map(|s| s.control_points().iter().copied()),
        )
    }
}

/// Quadrature data for one segment: local node times, weights and the
/// `(s_i, ψ̂_i)` pairs of the non-degenerate covisible features at each node.
struct SegmentNodes {
    duration: f64,
    nodes: Vec<(f64, f64, Vec<(f64, f64)>)>,
}

fn segment_nodes(pos: &PositionTrajectory, sets: &[Vec<Feature>]) -> Result<Vec<SegmentNodes>> {
    let durations = pos.durations();
    if sets.len() != durations.len() {
        return Err(Error::domain(format!("{} covisible sets for {} segments", sets.len(), durations.len())));
    }
    let (x, w) = gauss_legendre(QUADRATURE_NODES);
    let mut out = Vec::with_capacity(durations.len());
    let mut t0 = pos.start_time();
    for (j, &dur) in durations.iter().enumerate() {
        let mut nodes = Vec::with_capacity(QUADRATURE_NODES);
        let samples: Vec<(f64, Vec3, Vec3)> = x
            .iter()
            .map(|xi| {
                let local = 0.5 * dur * (1.0 + xi);
                let t = t0 + local;
                (local, pos.position(t), pos.velocity(t))
            })
            .collect();
        let usable: Vec<&Feature> = sets[j]
            .iter()
            .filter(|f| samples.iter().all(|(_, p, v)| desired_yaw_rate(p, v, &f.position).is_ok()))
            .collect();
        for ((local, p, v), wi) in samples.iter().zip(&w) {
            let hats = usable
                .iter()
                .map(|f| (f.score, desired_yaw_rate(p, v, &f.position).expect("filtered above")))
                .collect();
            nodes.push((*local, 0.5 * dur * wi, hats));
        }
        out.push(SegmentNodes { duration: dur, nodes });
        t0 += dur;
    }
    Ok(out)
}

/// `g(τ)` with `ψ̇(t) = g(τ)ᵀ c` for one segment's control vector `c`.
fn rate_row(duration: f64, local: f64) -> DVector<f64> {
    let d1 = hodograph_matrix(YAW_ORDER, 1, duration);
    let b = DVector::from_vec(bernstein_basis(YAW_ORDER - 1, local / duration));
    d1.transpose() * b
}

fn check_len(control: &DVector<f64>, segments: usize) -> Result<()> {
    if control.len() != segments * (YAW_ORDER + 1) {
        return Err(Error::domain(format!(
            "{} yaw control values for {segments} quartic segments",
            control.len()
        )));
    }
    Ok(())
}

/// Perceptual cost of the yaw control vector (16-node Gauss–Legendre per segment).
pub fn perceptual_cost(control: &DVector<f64>, pos: &PositionTrajectory, sets: &[Vec<Feature>]) -> Result<f64> {
    let segs = segment_nodes(pos, sets)?;
    check_len(control, segs.len())?;
    let mut total = 0.0;
    for (j, seg) in segs.iter().enumerate() {
        let c = control.rows(j * (YAW_ORDER + 1), YAW_ORDER + 1);
        for (local, w, hats) in &seg.nodes {
            let rate = rate_row(seg.duration, *local).dot(&c);
            total += w * hats.iter().map(|(s, h)| s * (h - rate).powi(2)).sum::<f64>();
        }
    }
    Ok(total)
}

/// Gradient of [`perceptual_cost`] with respect to every control value.
pub fn perceptual_gradient(
    control: &DVector<f64>,
    pos: &PositionTrajectory,
    sets: &[Vec<Feature>],
) -> Result<DVector<f64>> {
    let segs = segment_nodes(pos, sets)?;
    check_len(control, segs.len())?;
    let mut grad = DVector::zeros(control.len());
    for (j, seg) in segs.iter().enumerate() {
        let off = j * (YAW_ORDER + 1);
        let c = control.rows(off, YAW_ORDER + 1);
        for (local, w, hats) in &seg.nodes {
            let g = rate_row(seg.duration, *local);
            let rate = g.dot(&c);
            let coeff: f64 = hats.iter().map(|(s, h)| 2.0 * s * (rate - h)).sum();
            let mut part = grad.rows_mut(off, YAW_ORDER + 1);
            part.axpy(w * coeff, &g, 1.0);
        }
    }
    Ok(grad)
}

/// `Σ_j ∫ ψ̇_j² dt` in closed form.
pub fn smoothness_cost(curve: &PiecewiseBezier<f64>) -> f64 {
    curve
        .segments()
        .iter()
        .map(|s| {
            let c = DVector::from_column_slice(s.control_points());
            let h = derivative_cost_matrix(s.order(), 1, s.duration());
            c.dot(&(h * &c))
        })
        .sum()
}

/// The yaw objective as `xᵀ A x − 2 bᵀ x + k` over the full control vector.
#[derive(Debug, Clone)]
pub struct YawObjective {
    pub quadratic: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl YawObjective {
    pub fn build(pos: &PositionTrajectory, sets: &[Vec<Feature>], lambda: f64) -> Result<Self> {
        let segs = segment_nodes(pos, sets)?;
        let n = segs.len() * (YAW_ORDER + 1);
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut k = 0.0;
        for (j, seg) in segs.iter().enumerate() {
            let off = j * (YAW_ORDER + 1);
            let mut block = derivative_cost_matrix(YAW_ORDER, 1, seg.duration) * lambda;
            let mut lin = DVector::zeros(YAW_ORDER + 1);
            for (local, w, hats) in &seg.nodes {
                let g = rate_row(seg.duration, *local);
                let s_sum: f64 = hats.iter().map(|(s, _)| s).sum();
                let sh: f64 = hats.iter().map(|(s, h)| s * h).sum();
                block += &g * g.transpose() * (w * s_sum);
                lin += &g * (w * sh);
                k += w * hats.iter().map(|(s, h)| s * h * h).sum::<f64>();
            }
            a.view_mut((off, off), (YAW_ORDER + 1, YAW_ORDER + 1)).copy_from(&block);
            b.rows_mut(off, YAW_ORDER + 1).copy_from(&lin);
        }
        let quadratic = (&a + a.transpose()) * 0.5;
        Ok(Self { quadratic, linear: b, constant: k })
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.quadratic * x)) - 2.0 * self.linear.dot(x) + self.constant
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.quadratic * x - &self.linear) * 2.0
    }
}

fn linear_segments(psi_c: f64, waypoints: &[f64], durations: &[f64]) -> Result<Vec<BezierSegment<f64>>> {
    let mut prev = psi_c;
    let mut out = Vec::with_capacity(durations.len());
    for (psi, t) in waypoints.iter().zip(durations) {
        let pts = (0..=YAW_ORDER).map(|k| prev + (psi - prev) * k as f64 / YAW_ORDER as f64).collect();
        out.push(BezierSegment::new(pts, *t)?);
        prev = *psi;
    }
    Ok(out)
}

/// Piecewise-linear-in-time interpolation of the waypoint yaws.
pub fn linear_yaw(input: &YawPlanInput, cov: &CovisibilityResult) -> Result<YawTrajectory> {
    let base = input.position.durations();
    let factor = required_dilation(input.psi_c, &cov.waypoint_yaws, &base, input.params.psi_dot_max);
    let pos = if factor > 1.0 { input.position.dilated(factor)? } else { input.position.clone() };
    let durations = pos.durations();
    let segs = linear_segments(input.psi_c, &cov.waypoint_yaws, &durations)?;
    let curve = PiecewiseBezier::new(segs, pos.start_time())?;
    let objective = YawObjective::build(&pos, &cov.covisible_sets, input.params.lambda_psi)?;
    let value = objective.value(&DVector::from_iterator(
        durations.len() * (YAW_ORDER + 1),
        curve.segments().iter().flat_map(|s| s.control_points().iter().copied()),
    ));
    YawTrajectory::new(curve, cov, factor, value)
}

/// Equality and inequality rows of the yaw program on the given durations.
pub fn yaw_constraints(
    psi_c: f64,
    waypoints: &[f64],
    durations: &[f64],
    params: &PlannerParams,
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let m = durations.len();
    let w = YAW_ORDER + 1;
    let n = m * w;
    let mut eq: Vec<(Vec<(usize, f64)>, f64)> = vec![(vec![(0, 1.0)], psi_c)];
    for (j, psi) in waypoints.iter().enumerate() {
        eq.push((vec![(j * w + YAW_ORDER, 1.0)], *psi));
        if j + 1 < m {
            eq.push((vec![((j + 1) * w, 1.0)], *psi));
        }
    }
    if params.yaw_joint_c1 {
        for j in 0..m.saturating_sub(1) {
            let a = YAW_ORDER as f64 / durations[j];
            let b = YAW_ORDER as f64 / durations[j + 1];
            eq.push((
                vec![(j * w + YAW_ORDER, a), (j * w + YAW_ORDER - 1, -a), ((j + 1) * w + 1, -b), ((j + 1) * w, b)],
                0.0,
            ));
        }
    }
    let mut ineq: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for (j, &t) in durations.iter().enumerate() {
        for (r, bound) in [(1, params.psi_dot_max), (2, params.psi_ddot_max)] {
            let d = hodograph_matrix(YAW_ORDER, r, t);
            for row in 0..d.nrows() {
                let coeffs: Vec<(usize, f64)> = (0..w).filter(|&k| d[(row, k)] != 0.0).map(|k| (j * w + k, d[(row, k)])).collect();
                ineq.push((coeffs.clone(), bound));
                ineq.push((coeffs.into_iter().map(|(c, v)| (c, -v)).collect(), bound));
            }
        }
    }
    let to_dense = |rows: &[(Vec<(usize, f64)>, f64)]| {
        let mut a = DMatrix::zeros(rows.len(), n);
        let mut b = DVector::zeros(rows.len());
        for (i, (coeffs, rhs)) in rows.iter().enumerate() {
            for (c, v) in coeffs {
                a[(i, *c)] += v;
            }
            b[i] = *rhs;
        }
        (a, b)
    };
    let (ae, be) = to_dense(&eq);
    let (ai, bi) = to_dense(&ineq);
    (ae, be, ai, bi)
}

/// Minimise the yaw objective under waypoint interpolation and the yaw-rate and
/// yaw-acceleration limits. In modes without yaw optimisation this is
/// [`linear_yaw`]. Durations are dilated uniformly when the waypoints demand
/// more than the rate limit; the factor is reported in the result.
pub fn optimize_yaw(input: &YawPlanInput, cov: &CovisibilityResult) -> Result<YawTrajectory> {
    if !input.params.mode.optimizes_yaw() {
        return linear_yaw(input, cov);
    }
    let base = input.position.durations();
    let m = base.len();
    if cov.waypoint_yaws.len() != m || cov.covisible_sets.len() != m {
        return Err(Error::domain("covisibility result does not match the segment count"));
    }
    let mut factor = required_dilation(input.psi_c, &cov.waypoint_yaws, &base, input.params.psi_dot_max);
    for _ in 0..8 {
        let pos = if factor > 1.0 { input.position.dilated(factor)? } else { input.position.clone() };
        let durations = pos.durations();
        let objective = YawObjective::build(&pos, &cov.covisible_sets, input.params.lambda_psi)?;
        let (ae, be, ai, bi) = yaw_constraints(input.psi_c, &cov.waypoint_yaws, &durations, input.params);
        let qp = QuadraticProgram::new(&objective.quadratic * 2.0, &objective.linear * -2.0)
            .with_equalities(ae, be)
            .with_inequalities(ai, bi);
        let start = linear_segments(input.psi_c, &cov.waypoint_yaws, &durations)?;
        let x0 = DVector::from_iterator(m * (YAW_ORDER + 1), start.iter().flat_map(|s| s.control_points().iter().copied()));
        match solve_qp(&qp, &x0, QP_TOL) {
            Ok(sol) => {
                let mut segments = Vec::with_capacity(m);
                let mut prev = input.psi_c;
                for (j, &t) in durations.iter().enumerate() {
                    let mut pts: Vec<f64> = sol.x.rows(j * (YAW_ORDER + 1), YAW_ORDER + 1).iter().copied().collect();
                    pts[0] = prev;
                    pts[YAW_ORDER] = cov.waypoint_yaws[j];
                    prev = pts[YAW_ORDER];
                    segments.push(BezierSegment::new(pts, t)?);
                }
                let curve = PiecewiseBezier::new(segments, pos.start_time())?;
                let value = objective.value(&DVector::from_iterator(
                    m * (YAW_ORDER + 1),
                    curve.segments().iter().flat_map(|s| s.control_points().iter().copied()),
                ));
                return YawTrajectory::new(curve, cov, factor, value);
            }
            Err(QpError::Infeasible { .. }) => factor *= 1.25,
            Err(e) => return Err(e.into()),
        }
    }
    Err(Error::TrajectoryInfeasible { class: ConstraintClass::Dynamics })
}

/// Covisibility sampling followed by [`optimize_yaw`].
pub fn plan_yaw(input: &YawPlanInput) -> Result<YawTrajectory> {
    let cov = covisibility_sampling(input);
    optimize_yaw(input, &cov)
}
