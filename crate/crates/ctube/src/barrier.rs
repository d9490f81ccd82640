//! Scalar barrier functions and Lie-derivative machinery.
//!
//! A barrier `h` characterizes the target set `{x : h(x) >= 0}`. Constructors
//! supply analytic gradients (and Hessians where needed); arbitrary user
//! barriers must do the same.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};

pub type BarrierValueFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type BarrierGradFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type BarrierHessFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Shape metadata for quadratic barriers `h(x) = c - (x - shift)'P(x - shift)`,
/// used by the certificate module for exact boundary sampling.
#[derive(Clone)]
pub struct QuadraticForm {
    pub c: f64,
    pub p: DMatrix<f64>,
    pub shift: DVector<f64>,
}

pub struct Barrier {
    value: BarrierValueFn,
    gradient: BarrierGradFn,
    hessian: Option<BarrierHessFn>,
    quadratic: Option<QuadraticForm>,
    label: String,
}

impl Barrier {
    pub fn new(
        value: BarrierValueFn,
        gradient: BarrierGradFn,
        label: impl Into<String>,
    ) -> Self {
        Self {
            value,
            gradient,
            hessian: None,
            quadratic: None,
            label: label.into(),
        }
    }

    pub fn with_hessian(mut self, hessian: BarrierHessFn) -> Self {
        self.hessian = Some(hessian);
        self
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(x)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.hessian.as_ref().map(|h| h(x))
    }

    pub fn quadratic_form(&self) -> Option<&QuadraticForm> {
        self.quadratic.as_ref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// First-order Lie derivatives of a barrier along a system.
#[derive(Debug, Clone)]
pub struct LieData {
    /// `L_f h = grad h . f`
    pub lf_h: f64,
    /// `L_g h = grad h' g`, a row vector of length m
    pub lg_h: RowDVector<f64>,
}

/// `h(x) = c - x'Px` with P symmetric positive definite.
pub fn quadratic_barrier(c: f64, p: DMatrix<f64>) -> Result<Barrier> {
    let shift = DVector::zeros(p.nrows());
    quadratic_barrier_shifted(c, p, shift)
}

/// `h(x) = c - (x - shift)'P(x - shift)`; the shifted form covers barriers
/// centered away from the origin (e.g. the pendulum's upright equilibrium).
pub fn quadratic_barrier_shifted(c: f64, p: DMatrix<f64>, shift: DVector<f64>) -> Result<Barrier> {
    if c <= 0.0 {
        return Err(Error::Config(format!("quadratic barrier needs c > 0, got {c}")));
    }
    let n = p.nrows();
    if p.ncols() != n || shift.len() != n {
        return Err(Error::Config("P must be square and match the shift".into()));
    }
    let asym = (&p - p.transpose()).abs().max();
    if asym > 1e-10 * (1.0 + p.abs().max()) {
        return Err(Error::Config("P is not symmetric".into()));
    }
    // Positive semidefinite P is allowed: barriers over a subset of the
    // coordinates (e.g. position-only) use singular P.
    let min_eig = p
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-9 * (1.0 + p.abs().max()) {
        return Err(Error::Config(format!(
            "P is not positive semidefinite (min eigenvalue {min_eig:.3e})"
        )));
    }
    let form = QuadraticForm {
        c,
        p: p.clone(),
        shift: shift.clone(),
    };
    let (pv, ps) = (p.clone(), shift.clone());
    let (pg, sg) = (p.clone(), shift.clone());
    let ph = p.clone();
    let mut b = Barrier::new(
        Box::new(move |x| {
            let d = x - &ps;
            c - (d.transpose() * &pv * &d)[(0, 0)]
        }),
        Box::new(move |x| {
            let d = x - &sg;
            -(&pg * d) * 2.0
        }),
        "quadratic",
    )
    .with_hessian(Box::new(move |_| -&ph * 2.0));
    b.quadratic = Some(form);
    Ok(b)
}

/// `h(x) = eps2 - px^2 - py^2` over the first two (position) states: a
/// quadratic barrier with singular `P = diag(1, 1, 0, ...)`.
pub fn position_barrier(eps2: f64, state_dim: usize) -> Result<Barrier> {
    let mut p = DMatrix::zeros(state_dim, state_dim);
    p[(0, 0)] = 1.0;
    p[(1, 1)] = 1.0;
    quadratic_barrier(eps2, p)
}

/// `h_obs(x) = ||p - center||^2 - radius^2` over the first two (position)
/// states; gradient is zero in the remaining coordinates.
pub fn obstacle_barrier(center: [f64; 2], radius: f64, state_dim: usize) -> Result<Barrier> {
    if radius <= 0.0 {
        return Err(Error::Config(format!(
            "obstacle radius must be positive, got {radius}"
        )));
    }
    if state_dim < 2 {
        return Err(Error::Contract(
            "obstacle barrier needs at least two position states".into(),
        ));
    }
    let r2 = radius * radius;
    let b = Barrier::new(
        Box::new(move |x| {
            let dx = x[0] - center[0];
            let dy = x[1] - center[1];
            dx * dx + dy * dy - r2
        }),
        Box::new(move |x| {
            let mut g = DVector::zeros(state_dim);
            g[0] = 2.0 * (x[0] - center[0]);
            g[1] = 2.0 * (x[1] - center[1]);
            g
        }),
        "obstacle",
    )
    .with_hessian(Box::new(move |_| {
        let mut h = DMatrix::zeros(state_dim, state_dim);
        h[(0, 0)] = 2.0;
        h[(1, 1)] = 2.0;
        h
    }));
    Ok(b)
}

/// First-order Lie derivatives `(L_f h, L_g h)` at `x`.
pub fn lie_derivatives(b: &Barrier, sys: &ControlAffineSystem, x: &DVector<f64>) -> LieData {
    let grad = b.gradient(x);
    let lf_h = grad.dot(&sys.drift(x));
    let lg_h = grad.transpose() * sys.input_map(x);
    LieData { lf_h, lg_h }
}

/// Second-order terms for relative-degree-2 barriers: the drift and input
/// coefficients of `d^2 h / dt^2`,
/// `L_f^2 h = f' H f + grad h . (df/dx) f` and
/// `L_g L_f h = f' H g + grad h . (df/dx) g`.
///
/// Requires the barrier's Hessian and the system's drift Jacobian.
pub fn second_order_terms(
    b: &Barrier,
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
) -> Result<(f64, RowDVector<f64>)> {
    let hess = b
        .hessian(x)
        .ok_or_else(|| Error::Contract(format!("barrier '{}' has no Hessian", b.label())))?;
    let jac = sys.drift_jacobian(x).ok_or_else(|| {
        Error::Contract(format!("system '{}' has no drift Jacobian", sys.label()))
    })?;
    let f = sys.drift(x);
    let g = sys.input_map(x);
    let grad = b.gradient(x);
    let lf2_h = (f.transpose() * &hess * &f)[(0, 0)] + grad.dot(&(&jac * &f));
    let lglf_h = f.transpose() * &hess * &g + grad.transpose() * (&jac * &g);
    Ok((lf2_h, lglf_h))
}
