//! Bernstein basis, Bézier segments and piecewise Bézier curves.
//!
//! Segments are parameterised over local time `t ∈ [0, duration]`, with
//! `τ = t / duration` fed to the Bernstein basis. Quadratic functionals of a
//! segment (integrated squared derivatives) and the linear hodograph maps are
//! exposed as dense matrices over the control-point vector of a single axis, so
//! the trajectory programs can be assembled from them directly.

use std::fmt::Debug;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Binomial coefficient as a float; exact for the small orders used here.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernstein basis polynomial `C(n,k) (1−τ)^(n−k) τ^k`.
pub fn bernstein(k: usize, n: usize, tau: f64) -> Result<f64> {
    if k > n {
        return Err(Error::domain(format!("bernstein index {k} exceeds order {n}")));
    }
    Ok(bernstein_unchecked(k, n, tau))
}

#[inline]
fn bernstein_unchecked(k: usize, n: usize, tau: f64) -> f64 {
    binomial(n, k) * (1.0 - tau).powi((n - k) as i32) * tau.powi(k as i32)
}

/// All `n+1` Bernstein basis values at `tau`.
pub fn bernstein_basis(n: usize, tau: f64) -> Vec<f64> {
    (0..=n).map(|k| bernstein_unchecked(k, n, tau)).collect()
}

/// Values a Bézier curve can take: scalars (yaw) and 3-vectors (position).
pub trait ControlPoint:
    Copy + Debug + PartialEq + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn magnitude(&self) -> f64;
}

impl ControlPoint for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(&self) -> f64 {
        self.abs()
    }
}

impl ControlPoint for Vec3 {
    fn zero() -> Self {
        Vec3::zeros()
    }
    fn magnitude(&self) -> f64 {
        self.norm()
    }
}

/// One Bézier segment of order `N = control_points.len() − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BezierSegment<P> {
    control_points: Vec<P>,
    duration: f64,
}

impl<P: ControlPoint> BezierSegment<P> {
    pub fn new(control_points: Vec<P>, duration: f64) -> Result<Self> {
        if control_points.is_empty() {
            return Err(Error::domain("a Bézier segment needs at least one control point"));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::domain(format!("segment duration must be positive, got {duration}")));
        }
        Ok(Self { control_points, duration })
    }

    pub fn order(&self) -> usize {
        self.control_points.len() - 1
    }

    pub fn control_points(&self) -> &[P] {
        &self.control_points
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn first(&self) -> P {
        self.control_points[0]
    }

    pub fn last(&self) -> P {
        *self.control_points.last().expect("non-empty by construction")
    }

    /// Evaluate at normalised time `tau ∈ [0, 1]` via the Bernstein sum.
    pub fn eval_normalized(&self, tau: f64) -> P {
        let n = self.order();
        if tau == 0.0 {
            return self.first();
        }
        if tau == 1.0 {
            return self.last();
        }
        self.control_points
            .iter()
            .enumerate()
            .fold(P::zero(), |acc, (k, c)| acc + *c * bernstein_unchecked(k, n, tau))
    }

    /// Evaluate at local time `t ∈ [0, duration]`.
    pub fn eval(&self, t: f64) -> Result<P> {
        let slack = 1e-12 * self.duration.max(1.0);
        if !(t >= -slack && t <= self.duration + slack) {
            return Err(Error::domain(format!(
                "time {t} outside segment span [0, {}]",
                self.duration
            )));
        }
        Ok(self.eval_normalized((t / self.duration).clamp(0.0, 1.0)))
    }

    /// Time derivative (hodograph) as an order `N−1` segment over the same span.
    pub fn derivative(&self) -> Result<Self> {
        let n = self.order();
        if n == 0 {
            return Err(Error::domain("cannot differentiate an order-0 segment"));
        }
        let scale = n as f64 / self.duration;
        let control_points = self
            .control_points
            .windows(2)
            .map(|w| (w[1] - w[0]) * scale)
            .collect();
        Ok(Self { control_points, duration: self.duration })
    }

    /// Same control points, longer or shorter time span.
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        Self::new(self.control_points.clone(), duration)
    }
}

/// A chain of Bézier segments sharing joint values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseBezier<P> {
    segments: Vec<BezierSegment<P>>,
    start_time: f64,
}

impl<P: ControlPoint> PiecewiseBezier<P> {
    /// Build a curve; adjacent segments must agree at their joint within `1e-9`.
    pub fn new(segments: Vec<BezierSegment<P>>, start_time: f64) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::domain("a piecewise curve needs at least one segment"));
        }
        for (j, pair) in segments.windows(2).enumerate() {
            let gap = (pair[0].last() - pair[1].first()).magnitude();
            if gap > 1e-9 {
                return Err(Error::domain(format!("segments {j} and {} do not join (gap {gap:e})", j + 1)));
            }
        }
        Ok(Self { segments, start_time })
    }

    pub fn segments(&self) -> &[BezierSegment<P>] {
        &self.segments
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn durations(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.duration()).collect()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration()).sum()
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.total_duration()
    }

    /// Segment index and local time for absolute time `t`, clamped to the span.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let mut local = (t - self.start_time).max(0.0);
        let last = self.segments.len() - 1;
        for (j, seg) in self.segments.iter().enumerate() {
            if local <= seg.duration() || j == last {
                return (j, local.min(seg.duration()));
            }
            local -= seg.duration();
        }
        unreachable!("loop returns on the last segment")
    }

    /// Evaluate at absolute time `t`; times outside the span clamp to the ends.
    pub fn eval(&self, t: f64) -> P {
        let (j, local) = self.locate(t);
        let seg = &self.segments[j];
        seg.eval_normalized((local / seg.duration()).clamp(0.0, 1.0))
    }

    /// Segment-wise derivative. The result need not be continuous at joints.
    pub fn derivative(&self) -> Result<Vec<BezierSegment<P>>> {
        self.segments.iter().map(|s| s.derivative()).collect()
    }

    /// Stretch every segment duration by `factor`, keeping control points.
    pub fn dilated(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0) {
            return Err(Error::domain(format!("dilation factor must be positive, got {factor}")));
        }
        let segments = self
            .segments
            .iter()
            .map(|s| s.with_duration(s.duration() * factor))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { segments, start_time: self.start_time })
    }
}

/// Evaluate a list of (possibly discontinuous) derivative segments at absolute time.
pub fn eval_segments<P: ControlPoint>(segments: &[BezierSegment<P>], start_time: f64, t: f64) -> P {
    let mut local = (t - start_time).max(0.0);
    let last = segments.len() - 1;
    for (j, seg) in segments.iter().enumerate() {
        if local <= seg.duration() || j == last {
            let tau = (local / seg.duration()).clamp(0.0, 1.0);
            return seg.eval_normalized(tau);
        }
        local -= seg.duration();
    }
    unreachable!("loop returns on the last segment")
}

/// Gram matrix `G[i][j] = ∫₀¹ B_i^m B_j^m dτ` in closed form.
pub fn bernstein_gram(m: usize) -> DMatrix<f64> {
    let denom = (2 * m + 1) as f64;
    DMatrix::from_fn(m + 1, m + 1, |i, j| {
        binomial(m, i) * binomial(m, j) / (denom * binomial(2 * m, i + j))
    })
}

/// Map from the `N+1` control values to the `N−r+1` control values of the
/// `r`-th time derivative over a segment of length `duration`.
pub fn hodograph_matrix(order: usize, r: usize, duration: f64) -> DMatrix<f64> {
    assert!(r <= order, "derivative order {r} exceeds curve order {order}");
    let mut d = DMatrix::<f64>::identity(order + 1, order + 1);
    for level in 0..r {
        let n = order - level;
        let scale = n as f64 / duration;
        let mut step = DMatrix::<f64>::zeros(n, n + 1);
        for k in 0..n {
            step[(k, k)] = -scale;
            step[(k, k + 1)] = scale;
        }
        d = step * d;
    }
    d
}

/// Matrix `H` with `cᵀ H c = ∫₀^T (dʳ/dtʳ p(t))² dt` for one axis of one segment.
pub fn derivative_cost_matrix(order: usize, r: usize, duration: f64) -> DMatrix<f64> {
    if r > order {
        return DMatrix::zeros(order + 1, order + 1);
    }
    let d = hodograph_matrix(order, r, duration);
    let gram = bernstein_gram(order - r) * duration;
    let mut h = d.transpose() * gram * d;
    h = (&h + h.transpose()) * 0.5;
    h
}

/// Integrated squared snap (4th derivative) cost matrix.
pub fn snap_cost_matrix(order: usize, duration: f64) -> DMatrix<f64> {
    derivative_cost_matrix(order, 4, duration)
}
