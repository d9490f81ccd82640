//! Dense convex QP engine.
//!
//! Solves `min 1/2 u'Hu + q'u` subject to affine inequalities `Gu <= g` and
//! box bounds, for the small strictly convex programs produced by the
//! pointwise safety filters and the SQP planner (d up to ~60, a few dozen
//! rows). The solver is a dual active-set method in the style of Goldfarb and
//! Idnani: it starts from the unconstrained minimizer and adds the most
//! violated constraint until none remains, dropping active constraints whose
//! multiplier would turn negative. Infeasibility is certified when neither a
//! primal nor a dual step exists for a violated constraint.
//!
//! Every optimal verdict carries an explicitly computed KKT residual
//! (stationarity, feasibility and complementarity), so callers can assert
//! optimality rather than trust the iteration.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Violation threshold below which a constraint counts as satisfied.
const FEAS_TOL: f64 = 1e-11;
/// Threshold on the primal step direction norm for detecting dependence.
const Z_TOL: f64 = 1e-12;

/// A strictly convex quadratic program in standard form.
///
/// `min 1/2 u'Hu + q'u  s.t.  Gu <= g,  lower <= u <= upper`.
pub struct QpProblem {
    h: DMatrix<f64>,
    q: DVector<f64>,
    g_mat: DMatrix<f64>,
    g_vec: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl QpProblem {
    /// Builds an unconstrained problem; H must be symmetric with minimum
    /// eigenvalue at least 1e-9.
    pub fn new(h: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        let d = h.nrows();
        if h.ncols() != d || q.len() != d {
            return Err(Error::Contract(format!(
                "H must be square and match q: H is {}x{}, q has length {}",
                h.nrows(),
                h.ncols(),
                q.len()
            )));
        }
        let asym = (&h - h.transpose()).abs().max();
        if asym > 1e-10 * (1.0 + h.abs().max()) {
            return Err(Error::Config(format!(
                "H is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let min_eig = h
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < 1e-9 {
            return Err(Error::Config(format!(
                "H is not positive definite (min eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self {
            h,
            q,
            g_mat: DMatrix::zeros(0, d),
            g_vec: DVector::zeros(0),
            lower: DVector::from_element(d, f64::NEG_INFINITY),
            upper: DVector::from_element(d, f64::INFINITY),
        })
    }

    /// Adds inequality rows `Gu <= g`.
    pub fn with_inequalities(mut self, g_mat: DMatrix<f64>, g_vec: DVector<f64>) -> Result<Self> {
        if g_mat.ncols() != self.dim() || g_mat.nrows() != g_vec.len() {
            return Err(Error::Contract(format!(
                "inequality shapes {}x{} / {} do not match dimension {}",
                g_mat.nrows(),
                g_mat.ncols(),
                g_vec.len(),
                self.dim()
            )));
        }
        self.g_mat = g_mat;
        self.g_vec = g_vec;
        Ok(self)
    }

    /// Adds elementwise box bounds; entries may be infinite.
    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != self.dim() || upper.len() != self.dim() {
            return Err(Error::Contract("bound length mismatch".into()));
        }
        for i in 0..self.dim() {
            if lower[i] > upper[i] {
                return Err(Error::Config(format!(
                    "lower bound exceeds upper bound at index {i}"
                )));
            }
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn num_inequalities(&self) -> usize {
        self.g_mat.nrows()
    }

    /// All constraints as rows `c.u >= b`, tagged with their public index:
    /// 0..k are the G rows, k..k+d lower bounds, k+d..k+2d upper bounds.
    fn constraint_rows(&self) -> Vec<(usize, DVector<f64>, f64)> {
        let d = self.dim();
        let k = self.num_inequalities();
        let mut rows = Vec::with_capacity(k + 2 * d);
        for j in 0..k {
            let c = -self.g_mat.row(j).transpose();
            rows.push((j, c, -self.g_vec[j]));
        }
        for i in 0..d {
            if self.lower[i].is_finite() {
                let mut c = DVector::zeros(d);
                c[i] = 1.0;
                rows.push((k + i, c, self.lower[i]));
            }
            if self.upper[i].is_finite() {
                let mut c = DVector::zeros(d);
                c[i] = -1.0;
                rows.push((k + d + i, c, -self.upper[i]));
            }
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

/// Solver output, with the multipliers needed for KKT certification.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub status: QpStatus,
    /// Max over stationarity, primal feasibility and complementarity residuals.
    pub kkt_residual: f64,
    /// Public indices of the active constraints (see [`QpProblem`] indexing).
    pub active_set: Vec<usize>,
    /// Lagrange multipliers, aligned with `active_set`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

impl QpSolution {
    fn infeasible(d: usize, iterations: usize) -> Self {
        Self {
            u: DVector::zeros(d),
            status: QpStatus::Infeasible,
            kkt_residual: f64::INFINITY,
            active_set: Vec::new(),
            multipliers: Vec::new(),
            iterations,
        }
    }
}

/// Solves the QP to KKT residual <= 1e-8 or certifies infeasibility.
pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    let d = p.dim();
    let chol = Cholesky::new(p.h.clone())
        .ok_or_else(|| Error::Numerical("Cholesky factorization of H failed".into()))?;
    let rows = p.constraint_rows();
    let norms: Vec<f64> = rows.iter().map(|(_, c, _)| c.norm()).collect();
    let iter_cap = 100 * (d + rows.len()).max(1);

    let mut u = chol.solve(&(-&p.q));
    // positions into `rows` of the active constraints, with multipliers
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    'outer: loop {
        // most violated inactive constraint, normalized; Bland on ties
        let mut worst: Option<(usize, f64)> = None;
        for (pos, (_, c, b)) in rows.iter().enumerate() {
            if active.contains(&pos) || norms[pos] == 0.0 {
                continue;
            }
            let s = (c.dot(&u) - b) / norms[pos];
            if s < -FEAS_TOL && worst.map_or(true, |(_, w)| s < w - 1e-14) {
                worst = Some((pos, s));
            }
        }
        let Some((p_pos, _)) = worst else {
            break;
        };
        let n_p = rows[p_pos].1.clone();
        let b_p = rows[p_pos].2;
        let mut lambda_p = 0.0f64;

        // try to activate p, dropping blocking constraints along the way
        loop {
            iterations += 1;
            if iterations > iter_cap {
                return Err(Error::Numerical(format!(
                    "active-set iteration cap {iter_cap} exceeded"
                )));
            }
            let (z, r, scale) = step_directions(&chol, &rows, &active, &n_p)?;

            // dual blocking step
            let mut t1 = f64::INFINITY;
            let mut blocking: Option<usize> = None;
            for (j, &_pos) in active.iter().enumerate() {
                if r[j] > Z_TOL {
                    let cand = lambda[j] / r[j];
                    if cand < t1 {
                        t1 = cand;
                        blocking = Some(j);
                    }
                }
            }
            // primal step to the violated constraint; `z` counts as zero when
            // it is negligible relative to the unprojected direction, so a
            // numerically dependent constraint yields a dual-only step or an
            // infeasibility certificate instead of an enormous primal step
            let zn = z.dot(&n_p);
            let t2 = if z.norm() <= Z_TOL.max(1e-8 * scale) || zn <= 0.0 {
                f64::INFINITY
            } else {
                (b_p - n_p.dot(&u)) / zn
            };

            let t = t1.min(t2);
            if !t.is_finite() {
                return Ok(QpSolution::infeasible(d, iterations));
            }
            if t2.is_infinite() {
                // dual-only step: shed the blocking constraint, keep trying p
                for (j, l) in lambda.iter_mut().enumerate() {
                    *l -= t * r[j];
                }
                lambda_p += t;
                let j = blocking.expect("finite t1 implies a blocking index");
                active.remove(j);
                lambda.remove(j);
                continue;
            }
            u += &z * t;
            for (j, l) in lambda.iter_mut().enumerate() {
                *l -= t * r[j];
            }
            lambda_p += t;
            if t2 <= t1 {
                active.push(p_pos);
                lambda.push(lambda_p);
                continue 'outer;
            }
            let j = blocking.expect("t1 < t2 implies a blocking index");
            active.remove(j);
            lambda.remove(j);
        }
    }

    let (active_set, multipliers): (Vec<usize>, Vec<f64>) = active
        .iter()
        .map(|&pos| rows[pos].0)
        .zip(lambda.iter().cloned())
        .unzip();
    let kkt = kkt_residual(p, &rows, &u, &active, &lambda);
    if kkt > 1e-8 {
        return Err(Error::Numerical(format!(
            "solution failed KKT certification (residual {kkt:.3e})"
        )));
    }
    Ok(QpSolution {
        u,
        status: QpStatus::Optimal,
        kkt_residual: kkt,
        active_set,
        multipliers,
        iterations,
    })
}

/// Primal direction `z` and dual direction `r` for activating `n_p` against
/// the current active set, plus the norm of the unprojected direction
/// `H^{-1} n_p` as the scale reference for degeneracy tests.
fn step_directions(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    rows: &[(usize, DVector<f64>, f64)],
    active: &[usize],
    n_p: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    let hinv_np = chol.solve(n_p);
    let scale = hinv_np.norm();
    if active.is_empty() {
        return Ok((hinv_np, DVector::zeros(0), scale));
    }
    let d = n_p.len();
    let na = active.len();
    let mut n_mat = DMatrix::zeros(d, na);
    for (j, &pos) in active.iter().enumerate() {
        n_mat.set_column(j, &rows[pos].1);
    }
    let hinv_n = chol.solve(&n_mat);
    let m = n_mat.transpose() * &hinv_n;
    let rhs = n_mat.transpose() * &hinv_np;
    let r = m
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| m.lu().solve(&rhs))
        .ok_or_else(|| Error::Numerical("singular active-set system".into()))?;
    let z = &hinv_np - hinv_n * &r;
    Ok((z, r, scale))
}

fn kkt_residual(
    p: &QpProblem,
    rows: &[(usize, DVector<f64>, f64)],
    u: &DVector<f64>,
    active: &[usize],
    lambda: &[f64],
) -> f64 {
    let mut grad = &p.h * u + &p.q;
    for (j, &pos) in active.iter().enumerate() {
        grad -= &rows[pos].1 * lambda[j];
    }
    let stationarity = grad.abs().max();
    let mut feasibility = 0.0f64;
    for (_, c, b) in rows {
        feasibility = feasibility.max(b - c.dot(u));
    }
    let mut complementarity = 0.0f64;
    for (j, &pos) in active.iter().enumerate() {
        let (_, c, b) = &rows[pos];
        complementarity = complementarity.max((lambda[j] * (c.dot(u) - b)).abs());
        complementarity = complementarity.max(-lambda[j]);
    }
    stationarity.max(feasibility).max(complementarity)
}

/// Closed-form solution of `min ||u||^2  s.t.  a.u >= b, ||u||_2 <= u_max`.
///
/// The constraint is inactive when `b <= 0`; otherwise the minimizer aligns
/// with `a` and has norm `b/||a||`, which never exceeds `u_max` when the
/// problem is feasible.
pub fn solve_min_norm_ball(a: &DVector<f64>, b: f64, u_max: f64) -> QpSolution {
    let d = a.len();
    if b <= 0.0 {
        return QpSolution {
            u: DVector::zeros(d),
            status: QpStatus::Optimal,
            kkt_residual: 0.0,
            active_set: Vec::new(),
            multipliers: Vec::new(),
            iterations: 0,
        };
    }
    let a_norm = a.norm();
    if a_norm == 0.0 || b > u_max * a_norm {
        return QpSolution::infeasible(d, 0);
    }
    QpSolution {
        u: a * (b / (a_norm * a_norm)),
        status: QpStatus::Optimal,
        kkt_residual: 0.0,
        active_set: vec![0],
        multipliers: vec![2.0 * b / (a_norm * a_norm)],
        iterations: 1,
    }
}

/// Independent reference solver for tests: exhaustive KKT active-set
/// enumeration (all subsets of constraint rows up to size d), falling back to
/// a grid scan with coordinate-descent polish when enumeration is too large.
///
/// Returns `None` when no feasible point is found.
pub fn brute_force_oracle(p: &QpProblem, grid_resolution: f64) -> Option<DVector<f64>> {
    let rows = p.constraint_rows();
    let d = p.dim();
    let n_rows = rows.len();
    if n_rows <= 16 {
        return enumerate_active_sets(p, &rows);
    }
    if d <= 3 {
        return grid_search(p, &rows, grid_resolution);
    }
    None
}

fn objective(p: &QpProblem, u: &DVector<f64>) -> f64 {
    0.5 * (u.transpose() * &p.h * u)[(0, 0)] + p.q.dot(u)
}

fn feasible(rows: &[(usize, DVector<f64>, f64)], u: &DVector<f64>, tol: f64) -> bool {
    rows.iter().all(|(_, c, b)| c.dot(u) >= b - tol)
}

fn enumerate_active_sets(
    p: &QpProblem,
    rows: &[(usize, DVector<f64>, f64)],
) -> Option<DVector<f64>> {
    let d = p.dim();
    let n = rows.len();
    let chol = Cholesky::new(p.h.clone())?;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1u32 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if idx.len() > d {
            continue;
        }
        let u = if idx.is_empty() {
            chol.solve(&(-&p.q))
        } else {
            // KKT: H u + q = N mu, N' u = b_S
            let mut n_mat = DMatrix::zeros(d, idx.len());
            let mut b_s = DVector::zeros(idx.len());
            for (j, &i) in idx.iter().enumerate() {
                n_mat.set_column(j, &rows[i].1);
                b_s[j] = rows[i].2;
            }
            let hinv_n = chol.solve(&n_mat);
            let hinv_q = chol.solve(&p.q);
            let m = n_mat.transpose() * &hinv_n;
            let rhs = &b_s + n_mat.transpose() * &hinv_q;
            let mu = match m.lu().solve(&rhs) {
                Some(mu) => mu,
                None => continue,
            };
            if mu.iter().any(|&v| v < -1e-9) {
                continue;
            }
            hinv_n * mu - hinv_q
        };
        if !feasible(rows, &u, 1e-8) {
            continue;
        }
        let val = objective(p, &u);
        if best.as_ref().map_or(true, |(b, _)| val < *b) {
            best = Some((val, u));
        }
    }
    best.map(|(_, u)| u)
}

fn grid_search(
    p: &QpProblem,
    rows: &[(usize, DVector<f64>, f64)],
    resolution: f64,
) -> Option<DVector<f64>> {
    let d = p.dim();
    let (mut lo, mut hi) = (vec![0.0; d], vec![0.0; d]);
    let center = Cholesky::new(p.h.clone()).map(|c| c.solve(&(-&p.q)))?;
    for i in 0..d {
        lo[i] = if p.lower[i].is_finite() {
            p.lower[i]
        } else {
            center[i] - 10.0
        };
        hi[i] = if p.upper[i].is_finite() {
            p.upper[i]
        } else {
            center[i] + 10.0
        };
    }
    let steps: Vec<usize> = (0..d)
        .map(|i| (((hi[i] - lo[i]) / resolution).ceil() as usize).max(1))
        .collect();
    let total: usize = steps.iter().map(|s| s + 1).product();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for flat in 0..total {
        let mut rem = flat;
        let mut u = DVector::zeros(d);
        for i in 0..d {
            let k = rem % (steps[i] + 1);
            rem /= steps[i] + 1;
            u[i] = lo[i] + (hi[i] - lo[i]) * k as f64 / steps[i] as f64;
        }
        if !feasible(rows, &u, resolution) {
            continue;
        }
        let val = objective(p, &u);
        if best.as_ref().map_or(true, |(b, _)| val < *b) {
            best = Some((val, u));
        }
    }
    let (_, mut u) = best?;
    coordinate_polish(p, rows, &mut u);
    Some(u)
}

/// Projected coordinate descent: exact 1-D minimization per coordinate,
/// clamped to the interval allowed by the box and every affine row.
fn coordinate_polish(p: &QpProblem, rows: &[(usize, DVector<f64>, f64)], u: &mut DVector<f64>) {
    let d = p.dim();
    for _ in 0..500 {
        let mut moved = 0.0f64;
        for i in 0..d {
            let grad_i = (&p.h * &*u + &p.q)[i];
            let mut target = u[i] - grad_i / p.h[(i, i)];
            let (mut lo, mut hi) = (p.lower[i], p.upper[i]);
            for (_, c, b) in rows {
                let ci = c[i];
                if ci.abs() < 1e-14 {
                    continue;
                }
                let rest = c.dot(u) - ci * u[i];
                let bound = (b - rest) / ci;
                if ci > 0.0 {
                    lo = lo.max(bound);
                } else {
                    hi = hi.min(bound);
                }
            }
            if lo > hi {
                continue;
            }
            target = target.clamp(lo, hi);
            moved = moved.max((target - u[i]).abs());
            u[i] = target;
        }
        if moved < 1e-12 {
            break;
        }
    }
}
