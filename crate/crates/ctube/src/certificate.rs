//! Design-time feasibility certificates.
//!
//! The barrier authority `sigma(x)` is the largest achievable rate of change
//! of `h` at `x` under the input set. Its infimum over the tube boundary
//! across the horizon, `sigma_min`, bounds the constriction demand a schedule
//! may impose; for the linear schedule this gives the minimum recovery time
//! `T_min = r0 / sigma_min`, computable before deploying any controller.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::barrier::{lie_derivatives, Barrier};
use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::schedule::ConstrictionSchedule;

/// Symmetric convex input sets with a closed-form support function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputSet {
    /// `||u||_2 <= u_max`
    Ball2 { u_max: f64, dim: usize },
    /// `||u||_inf <= u_max`
    Box { u_max: f64, dim: usize },
}

impl InputSet {
    pub fn u_max(&self) -> f64 {
        match self {
            InputSet::Ball2 { u_max, .. } | InputSet::Box { u_max, .. } => *u_max,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InputSet::Ball2 { dim, .. } | InputSet::Box { dim, .. } => *dim,
        }
    }

    /// Support function `max_{u in U} w.u`.
    pub fn support(&self, w: &RowDVector<f64>) -> f64 {
        match self {
            InputSet::Ball2 { u_max, .. } => u_max * w.norm(),
            InputSet::Box { u_max, .. } => u_max * w.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    /// A maximizer of `w.u` over the set (the support point).
    pub fn support_point(&self, w: &RowDVector<f64>) -> DVector<f64> {
        match self {
            InputSet::Ball2 { u_max, dim } => {
                let n = w.norm();
                if n == 0.0 {
                    DVector::zeros(*dim)
                } else {
                    w.transpose() * (*u_max / n)
                }
            }
            InputSet::Box { u_max, dim } => {
                DVector::from_fn(*dim, |i, _| u_max * w[i].signum())
            }
        }
    }

    /// Whether `u` lies in the set, up to `tol`.
    pub fn contains(&self, u: &DVector<f64>, tol: f64) -> bool {
        match self {
            InputSet::Ball2 { u_max, .. } => u.norm() <= u_max + tol,
            InputSet::Box { u_max, .. } => u.amax() <= u_max + tol,
        }
    }
}

/// `sigma(x) = support(L_g h(x)) + L_f h(x)`: the maximum achievable hdot.
pub fn barrier_authority(
    b: &Barrier,
    sys: &ControlAffineSystem,
    set: &InputSet,
    x: &DVector<f64>,
) -> f64 {
    let lie = lie_derivatives(b, sys, x);
    set.support(&lie.lg_h) + lie.lf_h
}

/// Pointwise feasibility test: the QP on the tube boundary is feasible iff
/// the constriction demand does not exceed the barrier authority.
pub fn local_feasibility(sigma: f64, rdot: f64) -> bool {
    rdot.abs() <= sigma
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMethod {
    ClosedFormLinear,
    Sampled,
}

/// The result of a sigma_min computation.
///
/// A sampled certificate over-estimates the true infimum (it is a minimum
/// over finitely many boundary points); the closed-form linear certificate
/// evaluates the printed formula exactly.
#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityCertificate {
    pub sigma_min: f64,
    /// `r0 / sigma_min` when `sigma_min > 0`, 0 when `r0 = 0`, infinite
    /// otherwise.
    pub t_min: f64,
    pub method: CertificateMethod,
    /// Witness state and time for the reported minimum.
    pub worst_state: Vec<f64>,
    pub worst_time: f64,
    pub sample_count: usize,
    pub refinement_iterations: usize,
    pub seed: Option<u64>,
}

/// Minimum recovery time for the linear schedule.
pub fn t_min(r0: f64, sigma_min: f64) -> f64 {
    if r0 == 0.0 {
        0.0
    } else if sigma_min > 0.0 {
        r0 / sigma_min
    } else {
        f64::INFINITY
    }
}

/// Options for [`sigma_min_sampled`]. Sampling is deterministic given the
/// seed regardless of evaluation order.
#[derive(Debug, Clone)]
pub struct SampleOptions {
    pub time_grid: usize,
    pub boundary_samples: usize,
    pub refine_steps: usize,
    pub seed: u64,
    /// Center and radius of the draw region for the general (non-quadratic)
    /// boundary sampler.
    pub domain_center: Option<DVector<f64>>,
    pub domain_radius: f64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            time_grid: 64,
            boundary_samples: 128,
            refine_steps: 25,
            seed: 0,
            domain_center: None,
            domain_radius: 5.0,
        }
    }
}

/// Estimates the worst-case barrier authority by sampling the tube boundary
/// `{h(x) = -r(t)}` on a uniform time grid and refining the best candidates
/// by projected gradient descent along the boundary.
///
/// Feasibility analysis may be restricted to the boundary: in the tube
/// interior the class-K term strictly relaxes the constraint.
pub fn sigma_min_sampled(
    b: &Barrier,
    sys: &ControlAffineSystem,
    set: &InputSet,
    schedule: &ConstrictionSchedule,
    opts: &SampleOptions,
) -> Result<FeasibilityCertificate> {
    if opts.time_grid == 0 || opts.boundary_samples == 0 {
        return Err(Error::Contract("sample counts must be at least 1".into()));
    }
    let n = sys.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, DVector<f64>, f64, usize)> = None; // (sigma, x, t, index)
    let mut sample_index = 0usize;

    let times: Vec<f64> = (0..opts.time_grid)
        .map(|j| {
            if opts.time_grid == 1 {
                0.0
            } else {
                schedule.deadline() * j as f64 / (opts.time_grid - 1) as f64
            }
        })
        .collect();

    let mut refine_seeds: Vec<(f64, DVector<f64>, f64)> = Vec::new();
    for &t in &times {
        let level = -schedule.eval(t).r; // boundary: h(x) = level
        let mut found_any = false;
        for _ in 0..opts.boundary_samples {
            let x = match sample_boundary_point(b, level, n, &mut rng, opts) {
                Some(x) => x,
                None => continue,
            };
            found_any = true;
            let sigma = barrier_authority(b, sys, set, &x);
            let better = match &best {
                None => true,
                Some((s, _, _, idx)) => {
                    sigma < *s || (sigma == *s && sample_index < *idx)
                }
            };
            if better {
                best = Some((sigma, x.clone(), t, sample_index));
            }
            refine_seeds.push((sigma, x, t));
            sample_index += 1;
        }
        if !found_any {
            return Err(Error::Certificate(format!(
                "no tube boundary point found at t = {t} (level {level})"
            )));
        }
    }

    // refine from the few best samples
    refine_seeds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    refine_seeds.truncate(5);
    let mut refinement_iterations = 0usize;
    for (_, x0, t) in refine_seeds {
        let level = -schedule.eval(t).r;
        let mut x = x0;
        let mut step = 0.1 * (1.0 + x.norm());
        for _ in 0..opts.refine_steps {
            refinement_iterations += 1;
            let grad = numeric_sigma_gradient(b, sys, set, &x);
            let normal = b.gradient(&x);
            let nn = normal.norm_squared();
            let tangent = if nn > 0.0 {
                &grad - &normal * (grad.dot(&normal) / nn)
            } else {
                grad
            };
            if tangent.norm() < 1e-12 {
                break;
            }
            let mut trial = &x - &tangent * (step / tangent.norm().max(1e-12));
            if project_to_level(b, &mut trial, level).is_none() {
                step *= 0.5;
                continue;
            }
            let s_old = barrier_authority(b, sys, set, &x);
            let s_new = barrier_authority(b, sys, set, &trial);
            if s_new < s_old {
                x = trial;
                let idx = sample_index;
                sample_index += 1;
                let better = match &best {
                    None => true,
                    Some((s, _, _, _)) => s_new < *s,
                };
                if better {
                    best = Some((s_new, x.clone(), t, idx));
                }
            } else {
                step *= 0.5;
                if step < 1e-10 {
                    break;
                }
            }
        }
    }

    let (sigma_min, x, t, _) =
        best.ok_or_else(|| Error::Certificate("no boundary samples evaluated".into()))?;
    Ok(FeasibilityCertificate {
        sigma_min,
        t_min: t_min(schedule.r0(), sigma_min),
        method: CertificateMethod::Sampled,
        worst_state: x.as_slice().to_vec(),
        worst_time: t,
        sample_count: sample_index,
        refinement_iterations,
        seed: Some(opts.seed),
    })
}

/// Draws one point on `{h = level}`: exactly for strictly convex quadratic
/// barriers, by damped-Newton projection of a random draw otherwise.
fn sample_boundary_point(
    b: &Barrier,
    level: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
    opts: &SampleOptions,
) -> Option<DVector<f64>> {
    if let Some(form) = b.quadratic_form() {
        if let Some(chol) = form.p.clone().cholesky() {
            // boundary: (x - shift)'P(x - shift) = c - level
            let rho2 = form.c - level;
            if rho2 <= 0.0 {
                return None;
            }
            let z = DVector::from_fn(n, |_, _| gaussian(rng));
            let zn = z.norm();
            if zn == 0.0 {
                return None;
            }
            let y = z * (rho2.sqrt() / zn);
            // x = shift + P^{-1/2} y via L^{-T} y with P = L L'
            let x = &form.shift + chol.l().transpose().solve_upper_triangular(&y)?;
            return Some(x);
        }
    }
    let center = opts
        .domain_center
        .clone()
        .unwrap_or_else(|| DVector::zeros(n));
    let mut x = center + DVector::from_fn(n, |_, _| gaussian(rng)) * opts.domain_radius;
    project_to_level(b, &mut x, level)?;
    Some(x)
}

/// Damped Newton steps along the gradient until `|h(x) - level| <= 1e-10`.
fn project_to_level(b: &Barrier, x: &mut DVector<f64>, level: f64) -> Option<()> {
    for _ in 0..50 {
        let err = b.value(x) - level;
        if err.abs() <= 1e-10 {
            return Some(());
        }
        let g = b.gradient(x);
        let gn = g.norm_squared();
        if gn < 1e-14 {
            return None;
        }
        let mut damp = 1.0;
        let mut ok = false;
        for _ in 0..10 {
            let trial = &*x - &g * (damp * err / gn);
            if (b.value(&trial) - level).abs() < err.abs() {
                *x = trial;
                ok = true;
                break;
            }
            damp *= 0.5;
        }
        if !ok {
            return None;
        }
    }
    if (b.value(x) - level).abs() <= 1e-10 {
        Some(())
    } else {
        None
    }
}

fn numeric_sigma_gradient(
    b: &Barrier,
    sys: &ControlAffineSystem,
    set: &InputSet,
    x: &DVector<f64>,
) -> DVector<f64> {
    let n = x.len();
    let h = 1e-6 * (1.0 + x.norm());
    DVector::from_fn(n, |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (barrier_authority(b, sys, set, &xp) - barrier_authority(b, sys, set, &xm)) / (2.0 * h)
    })
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Closed-form worst-case authority for `xdot = Ax + Bu` with barrier
/// `h = c - x'Px` and a 2-norm input ball:
/// `sigma_min = 2c (mu_min u_max - lambda_max)`, where `mu_min` is the
/// minimum gain of `B'P^{1/2}` over unit state directions (zero whenever the
/// gain map has a kernel, e.g. fewer inputs than states) and `lambda_max` the
/// largest eigenvalue of the symmetric part of `P^{1/2} A P^{-1/2}` (the
/// maximum of the quadratic form the derivation actually bounds).
pub fn sigma_min_linear_closed_form(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    p: &DMatrix<f64>,
    c: f64,
    u_max: f64,
    r0: f64,
) -> Result<FeasibilityCertificate> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || p.nrows() != n || p.ncols() != n {
        return Err(Error::Contract("shape mismatch in closed-form certificate".into()));
    }
    if c <= 0.0 {
        return Err(Error::Config("closed-form certificate needs c > 0".into()));
    }
    let eig = p.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err(Error::Config("closed-form certificate needs P > 0".into()));
    }
    let sqrt_vals = eig.eigenvalues.map(|v| v.sqrt());
    let p_half = &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let p_half_inv = &eig.eigenvectors
        * DMatrix::from_diagonal(&sqrt_vals.map(|v| 1.0 / v))
        * eig.eigenvectors.transpose();

    // mu_min = min over unit state directions v of ||B'P^{1/2} v||, i.e. the
    // square root of the smallest eigenvalue of P^{1/2}BB'P^{1/2}. This is
    // zero whenever B has fewer inputs than states (the gain has a kernel),
    // which is what makes the stacked multi-agent bound vacuous.
    let gain = &p_half * b * b.transpose() * &p_half;
    let gain_eig = gain.symmetric_eigen();
    let (mu_idx, mu_sq) = gain_eig
        .eigenvalues
        .iter()
        .cloned()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .expect("nonempty spectrum");
    let mu_min = mu_sq.max(0.0).sqrt();

    let m = &p_half * a * &p_half_inv;
    let sym = (&m + m.transpose()) * 0.5;
    let lambda_max = sym
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);

    let sigma_min = 2.0 * c * (mu_min * u_max - lambda_max);

    // witness: the minimum-gain state direction on the terminal ellipsoid
    let worst_dir = gain_eig.eigenvectors.column(mu_idx).into_owned();
    let worst_state = &p_half_inv * worst_dir * c.sqrt();

    Ok(FeasibilityCertificate {
        sigma_min,
        t_min: t_min(r0, sigma_min),
        method: CertificateMethod::ClosedFormLinear,
        worst_state: worst_state.as_slice().to_vec(),
        worst_time: f64::NAN, // attained at the deadline; time is not sampled
        sample_count: 0,
        refinement_iterations: 0,
        seed: None,
    })
}
