//! Control-affine systems `xdot = f(x) + g(x) u` and the builtin models used
//! by the experiments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type ScalarFieldFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorFieldFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFieldFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Jacobian of `g(x) u` with respect to `x`, for a fixed input `u`.
pub type InputJacobianFn = Box<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A control-affine system with optional analytic Jacobians.
///
/// Immutable after construction; all evaluations are pure.
pub struct ControlAffineSystem {
    state_dim: usize,
    input_dim: usize,
    drift: VectorFieldFn,
    input_map: MatrixFieldFn,
    drift_jacobian: Option<MatrixFieldFn>,
    input_map_jacobian: Option<InputJacobianFn>,
    label: String,
}

impl ControlAffineSystem {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        drift: VectorFieldFn,
        input_map: MatrixFieldFn,
        label: impl Into<String>,
    ) -> Self {
        Self {
            state_dim,
            input_dim,
            drift,
            input_map,
            drift_jacobian: None,
            input_map_jacobian: None,
            label: label.into(),
        }
    }

    pub fn with_drift_jacobian(mut self, jac: MatrixFieldFn) -> Self {
        self.drift_jacobian = Some(jac);
        self
    }

    pub fn with_input_map_jacobian(mut self, jac: InputJacobianFn) -> Self {
        self.input_map_jacobian = Some(jac);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.drift)(x)
    }

    pub fn input_map(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.input_map)(x)
    }

    pub fn drift_jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.drift_jacobian.as_ref().map(|j| j(x))
    }

    /// Jacobian of `g(x) u` in `x` for fixed `u`; zero when `g` is constant
    /// and no Jacobian was supplied.
    pub fn input_map_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.input_map_jacobian.as_ref().map(|j| j(x, u))
    }

    /// Evaluates `f(x) + g(x) u`.
    pub fn eval_vector_field(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.state_dim {
            return Err(Error::Contract(format!(
                "state has length {} but {} expects {}",
                x.len(),
                self.label,
                self.state_dim
            )));
        }
        if u.len() != self.input_dim {
            return Err(Error::Contract(format!(
                "input has length {} but {} expects {}",
                u.len(),
                self.label,
                self.input_dim
            )));
        }
        Ok(self.drift(x) + self.input_map(x) * u)
    }
}

/// `xdot = Ax + Bu` with exact Jacobians.
pub fn linear_system(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<ControlAffineSystem> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Config("A must be square".into()));
    }
    if b.nrows() != n {
        return Err(Error::Config(format!(
            "B has {} rows but A is {n}x{n}",
            b.nrows()
        )));
    }
    let m = b.ncols();
    let a_drift = a.clone();
    let a_jac = a.clone();
    let b_map = b.clone();
    let sys = ControlAffineSystem::new(
        n,
        m,
        Box::new(move |x| &a_drift * x),
        Box::new(move |_| b_map.clone()),
        "linear",
    )
    .with_drift_jacobian(Box::new(move |_| a_jac.clone()))
    .with_input_map_jacobian(Box::new(move |x, _| DMatrix::zeros(x.len(), x.len())));
    Ok(sys)
}

/// The builtin models: a pendulum targeting the upright equilibrium, a planar
/// double integrator, a unicycle, and N identical decoupled linear agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Pendulum,
    DoubleIntegrator,
    Unicycle,
    /// Block-diagonal stack of N copies of the per-agent model.
    Multiagent {
        agents: usize,
    },
}

pub fn builtin(which: Builtin) -> Result<ControlAffineSystem> {
    match which {
        Builtin::Pendulum => Ok(pendulum()),
        Builtin::DoubleIntegrator => Ok(double_integrator()),
        Builtin::Unicycle => Ok(unicycle()),
        Builtin::Multiagent { agents } => multiagent(agents),
    }
}

/// Simple pendulum: `x1dot = x2, x2dot = -sin x1 + u`. The angle is not
/// wrapped; trig handles periodicity so gradients stay smooth.
pub fn pendulum() -> ControlAffineSystem {
    ControlAffineSystem::new(
        2,
        1,
        Box::new(|x| DVector::from_row_slice(&[x[1], -x[0].sin()])),
        Box::new(|_| DMatrix::from_row_slice(2, 1, &[0.0, 1.0])),
        "pendulum",
    )
    .with_drift_jacobian(Box::new(|x| {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -x[0].cos(), 0.0])
    }))
    .with_input_map_jacobian(Box::new(|_, _| DMatrix::zeros(2, 2)))
}

/// Planar double integrator: state `(px, py, vx, vy)`, input `(ux, uy)`.
pub fn double_integrator() -> ControlAffineSystem {
    ControlAffineSystem::new(
        4,
        2,
        Box::new(|x| DVector::from_row_slice(&[x[2], x[3], 0.0, 0.0])),
        Box::new(|_| {
            DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
        }),
        "double_integrator",
    )
    .with_drift_jacobian(Box::new(|_| {
        DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        )
    }))
    .with_input_map_jacobian(Box::new(|_, _| DMatrix::zeros(4, 4)))
}

/// Unicycle: state `(px, py, theta)`, input `(v, omega)`. Drift is zero; the
/// heading lives on R (unwrapped).
pub fn unicycle() -> ControlAffineSystem {
    ControlAffineSystem::new(
        3,
        2,
        Box::new(|_| DVector::zeros(3)),
        Box::new(|x| {
            let th = x[2];
            DMatrix::from_row_slice(3, 2, &[th.cos(), 0.0, th.sin(), 0.0, 0.0, 1.0])
        }),
        "unicycle",
    )
    .with_drift_jacobian(Box::new(|_| DMatrix::zeros(3, 3)))
    .with_input_map_jacobian(Box::new(|x, u| {
        let th = x[2];
        let v = u[0];
        let mut j = DMatrix::zeros(3, 3);
        j[(0, 2)] = -v * th.sin();
        j[(1, 2)] = v * th.cos();
        j
    }))
}

/// Per-agent matrices of the multi-agent experiment.
pub fn multiagent_block() -> (DMatrix<f64>, DMatrix<f64>) {
    (
        DMatrix::from_row_slice(2, 2, &[-0.1, 1.0, 0.0, 0.1]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
    )
}

/// Block-diagonal stack of `agents` copies of the per-agent model.
pub fn multiagent(agents: usize) -> Result<ControlAffineSystem> {
    if agents == 0 {
        return Err(Error::Config("multiagent requires at least one agent".into()));
    }
    let (a, b) = multiagent_block();
    linear_system(block_diag(&a, agents), block_diag(&b, agents))
}

/// Block-diagonal stacking of `copies` instances of `m`.
pub fn block_diag(m: &DMatrix<f64>, copies: usize) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(r * copies, c * copies);
    for k in 0..copies {
        out.view_mut((k * r, k * c), (r, c)).copy_from(m);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn pendulum_upright_is_equilibrium() {
        let sys = pendulum();
        let xdot = sys
            .eval_vector_field(
                &DVector::from_row_slice(&[PI, 0.0]),
                &DVector::from_row_slice(&[0.0]),
            )
            .unwrap();
        assert_abs_diff_eq!(xdot[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(xdot[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn double_integrator_drift_only() {
        let sys = double_integrator();
        let xdot = sys
            .eval_vector_field(
                &DVector::from_row_slice(&[3.0, 2.0, -0.3, -0.1]),
                &DVector::zeros(2),
            )
            .unwrap();
        assert_eq!(xdot.as_slice(), &[-0.3, -0.1, 0.0, 0.0]);
    }

    #[test]
    fn unicycle_forward_motion() {
        let sys = unicycle();
        let xdot = sys
            .eval_vector_field(&DVector::zeros(3), &DVector::from_row_slice(&[1.5, 0.0]))
            .unwrap();
        assert_abs_diff_eq!(xdot[0], 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(xdot[1], 0.0, epsilon = 1e-15);
        // heading pi/2: no x-motion
        let xdot = sys
            .eval_vector_field(
                &DVector::from_row_slice(&[0.0, 0.0, PI / 2.0]),
                &DVector::from_row_slice(&[1.0, 0.3]),
            )
            .unwrap();
        assert_abs_diff_eq!(xdot[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn pendulum_drift_example() {
        let sys = pendulum();
        let xdot = sys
            .eval_vector_field(
                &DVector::from_row_slice(&[PI + 0.79, 1.0]),
                &DVector::from_row_slice(&[1.5]),
            )
            .unwrap();
        assert_abs_diff_eq!(xdot[1], -(PI + 0.79).sin() + 1.5, epsilon = 1e-12);
        assert!((xdot[1] - 2.21).abs() < 0.01);
    }

    #[test]
    fn linear_system_basics() {
        let sys = linear_system(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let xdot = sys
            .eval_vector_field(
                &DVector::from_row_slice(&[2.0]),
                &DVector::from_row_slice(&[3.0]),
            )
            .unwrap();
        assert_abs_diff_eq!(xdot[0], 3.0, epsilon = 1e-15);

        let (a, b) = multiagent_block();
        let sys = linear_system(a, b).unwrap();
        let xdot = sys
            .eval_vector_field(&DVector::from_row_slice(&[1.0, 0.0]), &DVector::zeros(1))
            .unwrap();
        assert_abs_diff_eq!(xdot[0], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(xdot[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn multiagent_dimensions_and_block_agreement() {
        let sys = multiagent(8).unwrap();
        assert_eq!(sys.state_dim(), 16);
        assert_eq!(sys.input_dim(), 8);

        let (a, b) = multiagent_block();
        let explicit = linear_system(block_diag(&a, 8), block_diag(&b, 8)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let x = DVector::from_fn(16, |_, _| rng.gen_range(-3.0..3.0));
            let u = DVector::from_fn(8, |_, _| rng.gen_range(-2.0..2.0));
            let lhs = sys.eval_vector_field(&x, &u).unwrap();
            let rhs = explicit.eval_vector_field(&x, &u).unwrap();
            // identical block matrices must give bit-identical arithmetic
            assert_eq!(lhs.as_slice(), rhs.as_slice());
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let sys = pendulum();
        assert!(sys
            .eval_vector_field(&DVector::zeros(3), &DVector::zeros(1))
            .is_err());
        assert!(sys
            .eval_vector_field(&DVector::zeros(2), &DVector::zeros(2))
            .is_err());
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let systems: Vec<(ControlAffineSystem, f64)> = vec![
            (pendulum(), 3.0),
            (double_integrator(), 3.0),
            (unicycle(), 3.0),
            (multiagent(8).unwrap(), 3.0),
        ];
        for (sys, range) in &systems {
            let n = sys.state_dim();
            for _ in 0..100 {
                let x = DVector::from_fn(n, |_, _| rng.gen_range(-range..*range));
                let jac = sys.drift_jacobian(&x).unwrap();
                let h = 1e-6;
                let mut max_rel = 0.0f64;
                for j in 0..n {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let col = (sys.drift(&xp) - sys.drift(&xm)) / (2.0 * h);
                    for i in 0..n {
                        let denom = 1.0f64.max(jac[(i, j)].abs());
                        max_rel = max_rel.max((col[i] - jac[(i, j)]).abs() / denom);
                    }
                }
                assert!(max_rel <= 1e-5, "{}: rel err {max_rel}", sys.label());
            }
        }
    }
}
