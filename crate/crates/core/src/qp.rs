//! Dense convex quadratic programming.
//!
//! Solves
//!
//! ```text
//!     minimize    ½ xᵀ H x + gᵀ x
//!     subject to  A_eq x  = b_eq
//!                 A_in x <= b_in
//! ```
//!
//! Equalities are eliminated first: `x = x_p + Z y` with `Z` an orthonormal
//! basis of `null(A_eq)` and `x_p` the projection of the caller's start point
//! onto the equality manifold. The reduced inequality-constrained program is
//! then solved with a dual active-set method (Goldfarb–Idnani). Each step works
//! on the Schur complement `Nᵀ G⁻¹ N` of the active constraint normals, and the
//! violated constraint to add is always the lowest-indexed one, so runs are
//! reproducible bit for bit.
//!
//! A reduced Hessian that is only semidefinite is handled by proximal-point
//! refinement: a sequence of strictly convex problems with a small `δ‖y − y_k‖²`
//! term, each started from the previous solution, converges to a minimiser of
//! the original program.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// Which constraint row a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintRef {
    Equality(usize),
    Inequality(usize),
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("hessian is not positive semidefinite on the feasible subspace")]
    NotConvex,

    #[error("program is infeasible (first conflicting row: {constraint:?})")]
    Infeasible { constraint: Option<ConstraintRef> },

    #[error("no convergence within {iterations} iterations")]
    NotConverged { iterations: usize, best: DVector<f64> },
}

/// A dense QP in the form documented at module level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

impl QuadraticProgram {
    /// Unconstrained program `½ xᵀHx + gᵀx`.
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.eq_matrix = a;
        self.eq_rhs = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.ineq_matrix = a;
        self.ineq_rhs = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        let shape = |what: &str, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(QpError::Dimension(format!("{what} is {got:?}, expected {want:?}")))
            } else {
                Ok(())
            }
        };
        shape("hessian", self.hessian.shape(), (n, n))?;
        shape("eq_matrix", self.eq_matrix.shape(), (self.eq_rhs.len(), n))?;
        shape("ineq_matrix", self.ineq_matrix.shape(), (self.ineq_rhs.len(), n))?;
        let scale = self.hessian.amax().max(1.0);
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Largest constraint violation at `x` (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.eq_matrix * x - &self.eq_rhs).amax();
        let ineq = (&self.ineq_matrix * x - &self.ineq_rhs)
            .iter()
            .fold(0.0f64, |acc, v| acc.max(*v));
        eq.max(ineq)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Feasibility tolerance on every constraint row.
    pub constraint_tol: f64,
    /// Tolerance on the KKT stationarity residual.
    pub stationarity_tol: f64,
    /// Cap on active-set steps per inner solve.
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { constraint_tol: 1e-8, stationarity_tol: 1e-6, max_iterations: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub eq_multipliers: DVector<f64>,
    /// Non-negative multipliers for `A_in x <= b_in`; zero for inactive rows.
    pub ineq_multipliers: DVector<f64>,
    /// Active inequality rows at the solution, in activation order.
    pub active_set: Vec<usize>,
    pub iterations: usize,
    /// `‖Hx + g + A_eqᵀν + A_inᵀλ‖∞` at the returned point.
    pub stationarity: f64,
}

/// Solve with default settings and the given constraint tolerance.
pub fn solve_qp(qp: &QuadraticProgram, x0: &DVector<f64>, tol: f64) -> Result<QpSolution, QpError> {
    let settings = QpSettings { constraint_tol: tol, ..QpSettings::default() };
    solve_qp_with(qp, x0, &settings)
}

pub fn solve_qp_with(
    qp: &QuadraticProgram,
    x0: &DVector<f64>,
    settings: &QpSettings,
) -> Result<QpSolution, QpError> {
    qp.validate()?;
    let n = qp.dim();
    if x0.len() != n {
        return Err(QpError::Dimension(format!("start point has {} entries, expected {n}", x0.len())));
    }
    let tol = settings.constraint_tol;
    let (x_p, basis) = eliminate_equalities(qp, x0, tol)?;
    let k = basis.ncols();

    let h_red = basis.transpose() * &qp.hessian * &basis;
    let h_red = (&h_red + h_red.transpose()) * 0.5;
    let g_red = basis.transpose() * (&qp.hessian * &x_p + &qp.linear);
    let c_red = &qp.ineq_matrix * &basis;
    let d_red = &qp.ineq_rhs - &qp.ineq_matrix * &x_p;
    let m = d_red.len();
    let max_iterations = if settings.max_iterations > 0 {
        settings.max_iterations
    } else {
        20 * (m + k) + 100
    };

    let (y, u, active, iterations) = if k == 0 {
        if let Some(i) = (0..m).find(|&i| d_red[i] < -tol) {
            return Err(QpError::Infeasible { constraint: Some(ConstraintRef::Inequality(i)) });
        }
        (DVector::zeros(0), DVector::zeros(m), Vec::new(), 0)
    } else {
        solve_reduced(&h_red, &g_red, &c_red, &d_red, tol, max_iterations)
            .map_err(|e| lift_error(e, &x_p, &basis))?
    };

    let x = &x_p + &basis * &y;
    let grad = &qp.hessian * &x + &qp.linear + qp.ineq_matrix.transpose() * &u;
    let eq_multipliers = if qp.eq_rhs.is_empty() {
        DVector::zeros(0)
    } else {
        let at = qp.eq_matrix.transpose();
        at.clone()
            .svd(true, true)
            .solve(&(-&grad), 1e-12)
            .unwrap_or_else(|_| DVector::zeros(qp.eq_rhs.len()))
    };
    let residual = &grad + qp.eq_matrix.transpose() * &eq_multipliers;
    Ok(QpSolution {
        objective: qp.objective(&x),
        stationarity: residual.amax(),
        x,
        eq_multipliers,
        ineq_multipliers: u,
        active_set: active,
        iterations,
    })
}

fn lift_error(err: QpError, x_p: &DVector<f64>, basis: &DMatrix<f64>) -> QpError {
    match err {
        QpError::NotConverged { iterations, best } => {
            QpError::NotConverged { iterations, best: x_p + basis * best }
        }
        other => other,
    }
}

/// Returns `(x_p, Z)` with `A_eq x_p = b_eq` and orthonormal `Z` spanning `null(A_eq)`.
fn eliminate_equalities(
    qp: &QuadraticProgram,
    x0: &DVector<f64>,
    tol: f64,
) -> Result<(DVector<f64>, DMatrix<f64>), QpError> {
    let n = qp.dim();
    if qp.eq_rhs.is_empty() {
        return Ok((x0.clone(), DMatrix::identity(n, n)));
    }
    // Row scaling leaves the manifold unchanged and keeps the rank test honest
    // when rows mix position- and derivative-scale coefficients.
    let mut a = qp.eq_matrix.clone();
    let mut b = qp.eq_rhs.clone();
    for i in 0..a.nrows() {
        let norm = a.row(i).norm();
        if norm > 0.0 {
            a.row_mut(i).scale_mut(1.0 / norm);
            b[i] /= norm;
        }
    }
    let a = &a;
    let gram = a.transpose() * a;
    let eig = SymmetricEigen::new(gram);
    let lam_max = eig.eigenvalues.amax();
    let threshold = lam_max * 1e-11 * n as f64;
    let range: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > threshold).collect();
    let null: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= threshold).collect();

    // Minimum-norm correction of x0 onto the equality manifold.
    let residual = &b - a * x0;
    let rhs = a.transpose() * residual;
    let mut x_p = x0.clone();
    for &i in &range {
        let v = eig.eigenvectors.column(i);
        x_p += v * (v.dot(&rhs) / eig.eigenvalues[i]);
    }
    let miss = a * &x_p - &b;
    let scale = b.amax().max(1.0);
    if miss.amax() > tol * scale {
        let worst = miss.iamax();
        return Err(QpError::Infeasible { constraint: Some(ConstraintRef::Equality(worst)) });
    }
    let mut basis = DMatrix::zeros(n, null.len());
    for (col, &i) in null.iter().enumerate() {
        basis.set_column(col, &eig.eigenvectors.column(i));
    }
    Ok((x_p, basis))
}

type Reduced = (DVector<f64>, DVector<f64>, Vec<usize>, usize);

/// Reduced program `½ yᵀHy + gᵀy` s.t. `C y <= d`, with proximal refinement for
/// semidefinite `H`.
fn solve_reduced(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    tol: f64,
    max_iterations: usize,
) -> Result<Reduced, QpError> {
    let k = g.len();
    let diag_max = (0..k).map(|i| h[(i, i)]).fold(0.0f64, f64::max);
    if let Some(chol) = definite_cholesky(h, diag_max) {
        return dual_active_set(&chol, g, c, d, tol, max_iterations);
    }
    let delta = 1e-8 * diag_max.max(g.amax()).max(1.0);
    let regularised = h + DMatrix::identity(k, k) * delta;
    let chol = Cholesky::new(regularised).ok_or(QpError::NotConvex)?;
    let mut center = DVector::zeros(k);
    let mut total = 0;
    let mut last: Option<Reduced> = None;
    for _ in 0..500 {
        let shifted = g - &center * delta;
        let (y, u, active, iters) = dual_active_set(&chol, &shifted, c, d, tol, max_iterations)?;
        total += iters;
        let step = (&y - &center).amax();
        let done = step <= 1e-3 * tol * (1.0 + y.amax());
        center = y.clone();
        last = Some((y, u, active, total));
        if done {
            return Ok(last.expect("just assigned"));
        }
    }
    let (best, ..) = last.expect("at least one proximal iteration ran");
    Err(QpError::NotConverged { iterations: total, best })
}

fn definite_cholesky(h: &DMatrix<f64>, diag_max: f64) -> Option<Cholesky<f64, Dyn>> {
    if diag_max <= 0.0 {
        return None;
    }
    let chol = Cholesky::new(h.clone())?;
    let l = chol.l_dirty();
    let min_pivot = (0..h.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    (min_pivot > 1e-12 * diag_max).then_some(chol)
}

/// Goldfarb–Idnani dual active-set method for `½ yᵀGy + gᵀy` s.t. `C y <= d`
/// with `G` positive definite (given by its Cholesky factor).
fn dual_active_set(
    chol: &Cholesky<f64, Dyn>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    tol: f64,
    max_iterations: usize,
) -> Result<Reduced, QpError> {
    let m = d.len();
    let k = g.len();
    let mut y = -chol.solve(g);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    // Constraints are handled as n_iᵀ y >= b_i with n_i = −c_i, b_i = −d_i.
    let slack = |y: &DVector<f64>, i: usize| d[i] - c.row(i).transpose().dot(y);

    loop {
        let Some(p) = (0..m).find(|&i| slack(&y, i) < -tol) else {
            break;
        };
        let normal: DVector<f64> = -c.row(p).transpose();
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Err(QpError::NotConverged { iterations, best: y });
            }
            let w = chol.solve(&normal);
            let (z, r) = if active.is_empty() {
                (w.clone(), DVector::zeros(0))
            } else {
                let mut nmat = DMatrix::zeros(k, active.len());
                for (col, &j) in active.iter().enumerate() {
                    nmat.set_column(col, &(-c.row(j).transpose()));
                }
                let gin = chol.solve(&nmat);
                let schur = nmat.transpose() * &gin;
                let rhs = gin.transpose() * &normal;
                let r = match Cholesky::new(schur.clone()) {
                    Some(sc) => sc.solve(&rhs),
                    None => schur.lu().solve(&rhs).ok_or(QpError::NotConvex)?,
                };
                (&w - &gin * &r, r)
            };

            let r_scale = r.amax().max(1.0);
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (idx, &rj) in r.iter().enumerate() {
                if rj > 1e-13 * r_scale {
                    let ratio = u[idx] / rj;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(idx);
                    }
                }
            }
            let zn = z.dot(&normal);
            let wn = w.dot(&normal);
            let t2 = if zn > 1e-12 * wn { -slack(&y, p) / zn } else { f64::INFINITY };

            if t1.is_infinite() && t2.is_infinite() {
                return Err(QpError::Infeasible { constraint: Some(ConstraintRef::Inequality(p)) });
            }
            if t2.is_infinite() {
                for (ui, ri) in u.iter_mut().zip(r.iter()) {
                    *ui -= t1 * ri;
                }
                u_p += t1;
                let l = drop_at.expect("finite t1 has an index");
                active.remove(l);
                u.remove(l);
                continue;
            }
            let t = t1.min(t2);
            y += &z * t;
            for (ui, ri) in u.iter_mut().zip(r.iter()) {
                *ui -= t * ri;
            }
            u_p += t;
            if t2 <= t1 {
                active.push(p);
                u.push(u_p);
                break;
            }
            let l = drop_at.expect("finite t1 has an index");
            active.remove(l);
            u.remove(l);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (&j, &uj) in active.iter().zip(u.iter()) {
        multipliers[j] = uj.max(0.0);
    }
    Ok((y, multipliers, active, iterations))
}
