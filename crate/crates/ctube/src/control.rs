//! Pointwise feedback controllers and the closed-loop simulator.
//!
//! Three controllers share one shape: assemble a single affine constraint in
//! `u` from the barrier, the schedule, and the dynamics, then solve a
//! min-norm (or min-deviation) QP over the input set. The simulator runs
//! fixed-step RK4 with zero-order-hold inputs and records everything needed
//! to audit a run.

use nalgebra::{DVector, RowDVector};

use crate::barrier::{lie_derivatives, second_order_terms, Barrier};
use crate::certificate::InputSet;
use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::qpsolve::{solve_min_norm_ball, solve_qp, QpProblem, QpStatus};
use crate::schedule::{ConstrictionSchedule, ScheduleKind};

/// Nominal feedback `x -> u_nom` that the QP deviates from minimally.
pub type NominalFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    CbfQp,
    Hocbf2Qp,
    PtClfBaseline,
}

/// Everything a pointwise controller needs: barrier, schedule, input set,
/// class-K / cascade gains, and an optional nominal law.
pub struct ControllerSpec {
    pub kind: ControllerKind,
    pub alpha: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Decay gain of the prescribed-time CLF baseline.
    pub c_theta: f64,
    pub input_set: InputSet,
    barrier: Barrier,
    schedule: ConstrictionSchedule,
    nominal: Option<NominalFn>,
    aux_barriers: Vec<Barrier>,
}

impl ControllerSpec {
    pub fn new(
        kind: ControllerKind,
        input_set: InputSet,
        barrier: Barrier,
        schedule: ConstrictionSchedule,
    ) -> Self {
        Self {
            kind,
            alpha: 0.9,
            gamma1: 0.9,
            gamma2: 0.9,
            c_theta: 2.0,
            input_set,
            barrier,
            schedule,
            nominal: None,
            aux_barriers: Vec::new(),
        }
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::Contract("alpha must be positive".into()));
        }
        self.alpha = alpha;
        Ok(self)
    }

    pub fn with_gammas(mut self, gamma1: f64, gamma2: f64) -> Result<Self> {
        if gamma1 <= 0.0 || gamma2 <= 0.0 {
            return Err(Error::Contract("gamma1, gamma2 must be positive".into()));
        }
        self.gamma1 = gamma1;
        self.gamma2 = gamma2;
        Ok(self)
    }

    pub fn with_c_theta(mut self, c_theta: f64) -> Result<Self> {
        if c_theta <= 0.0 {
            return Err(Error::Contract("c_theta must be positive".into()));
        }
        self.c_theta = c_theta;
        Ok(self)
    }

    pub fn with_nominal(mut self, nominal: NominalFn) -> Self {
        self.nominal = Some(nominal);
        self
    }

    /// Extra barriers recorded (not enforced) along the trajectory.
    pub fn with_aux_barrier(mut self, b: Barrier) -> Self {
        self.aux_barriers.push(b);
        self
    }

    pub fn barrier(&self) -> &Barrier {
        &self.barrier
    }

    pub fn schedule(&self) -> &ConstrictionSchedule {
        &self.schedule
    }

    fn nominal_input(&self, x: &DVector<f64>, m: usize) -> Result<DVector<f64>> {
        match &self.nominal {
            None => Ok(DVector::zeros(m)),
            Some(f) => {
                let u = f(x);
                if u.len() != m {
                    return Err(Error::Contract(format!(
                        "nominal law returned dimension {}, expected {m}",
                        u.len()
                    )));
                }
                Ok(u)
            }
        }
    }
}

/// PD position law for the planar double integrator state `(p, v)`.
pub fn pd_nominal(k_p: f64, k_d: f64) -> NominalFn {
    Box::new(move |x: &DVector<f64>| {
        DVector::from_row_slice(&[
            -k_p * x[0] - k_d * x[2],
            -k_p * x[1] - k_d * x[3],
        ])
    })
}

/// The constricting CBF-QP constraint `w . u >= b`:
/// `L_g h . u >= -(L_f h + rdot + alpha * (h + r))`.
pub fn cbf_constraint(
    spec: &ControllerSpec,
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    t: f64,
) -> (RowDVector<f64>, f64) {
    let lie = lie_derivatives(&spec.barrier, sys, x);
    let s = spec.schedule.eval(t);
    let tube = spec.barrier.value(x) + s.r;
    let rhs = -(lie.lf_h + s.rdot + spec.alpha * tube);
    (lie.lg_h, rhs)
}

/// Min-deviation QP under the constricting CBF constraint and the input set.
/// On infeasibility the returned input is the best-effort fallback (the
/// support point of the constraint direction) and the status says so.
pub fn cbf_qp_control(
    spec: &ControllerSpec,
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, QpStatus)> {
    if spec.kind != ControllerKind::CbfQp {
        return Err(Error::Contract("spec.kind must be cbf_qp".into()));
    }
    let m = sys.input_dim();
    let (w, rhs) = cbf_constraint(spec, sys, x, t);
    let u_nom = spec.nominal_input(x, m)?;
    match spec.input_set {
        InputSet::Ball2 { u_max, .. } => {
            if u_nom.norm() != 0.0 {
                return Err(Error::Contract(
                    "ball2 input set supports only u_nom = 0 (min-norm)".into(),
                ));
            }
            let sol = solve_min_norm_ball(&w.transpose(), rhs, u_max);
            match sol.status {
                QpStatus::Optimal => Ok((sol.u, QpStatus::Optimal)),
                _ => Ok((spec.input_set.support_point(&w), QpStatus::Infeasible)),
            }
        }
        InputSet::Box { u_max, .. } => {
            solve_constraint_box(&w, rhs, &u_nom, u_max, &spec.input_set)
        }
    }
}

/// Relative-degree-2 HOCBF QP: `psi1dot + gamma2 psi1 >= 0` written out as
/// `L_f^2 h + L_g L_f h . u + rddot + gamma1 (L_f h + rdot) + gamma2 psi1 >= 0`.
pub fn hocbf_qp_control(
    spec: &ControllerSpec,
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, QpStatus)> {
    if spec.kind != ControllerKind::Hocbf2Qp {
        return Err(Error::Contract("spec.kind must be hocbf2_qp".into()));
    }
    let (w, rhs, _, _) = hocbf_constraint(spec, sys, x, t)?;
    let m = sys.input_dim();
    let u_nom = spec.nominal_input(x, m)?;
    let u_max = spec.input_set.u_max();
    let boxed = InputSet::Box { u_max, dim: m };
    solve_constraint_box(&w, rhs, &u_nom, u_max, &boxed)
}

/// The HOCBF constraint row and right-hand side, plus `(psi0, psi1)`.
pub fn hocbf_constraint(
    spec: &ControllerSpec,
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    t: f64,
) -> Result<(RowDVector<f64>, f64, f64, f64)> {
    match spec.schedule.kind() {
        ScheduleKind::Linear => {
            return Err(Error::Contract(
                "HOCBF cascade needs a C2 schedule; linear is only C0 at the deadline".into(),
            ))
        }
        ScheduleKind::Polynomial { power } if power < 2.0 => {
            return Err(Error::Contract(
                "HOCBF cascade needs polynomial power >= 2".into(),
            ))
        }
        _ => {}
    }
    let lie = lie_derivatives(&spec.barrier, sys, x);
    if lie.lg_h.norm() > 1e-9 {
        return Err(Error::Contract(
            "HOCBF cascade expects a relative-degree-2 barrier (L_g h = 0)".into(),
        ));
    }
    let (lf2_h, lglf_h) = second_order_terms(&spec.barrier, sys, x)?;
    let s = spec.schedule.eval(t);
    let psi0 = spec.barrier.value(x) + s.r;
    let psi1 = lie.lf_h + s.rdot + spec.gamma1 * psi0;
    let rhs = -(lf2_h
        + s.rddot
        + spec.gamma1 * (lie.lf_h + s.rdot)
        + spec.gamma2 * psi1);
    Ok((lglf_h, rhs, psi0, psi1))
}

/// Prescribed-time CLF baseline: enforce `Vdot <= -(c_theta/theta) V` for
/// `V = -h/theta^2`, `theta = 1 - t/T`, which reduces to the affine condition
/// `L_f h + L_g h . u >= -(c_theta + 2/T) h / theta`, then clip to the box.
/// The required decay diverges as `t -> T`, so clipping dominates late.
pub fn pt_clf_constraint(
    spec: &ControllerSpec,
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    t: f64,
) -> Result<(RowDVector<f64>, f64)> {
    let t_end = spec.schedule.deadline();
    if t >= t_end {
        return Err(Error::Domain(format!(
            "prescribed-time CLF baseline undefined at t = {t} >= T = {t_end}"
        )));
    }
    if spec.barrier.quadratic_form().is_none() {
        return Err(Error::Contract("baseline requires a quadratic barrier".into()));
    }
    let theta = 1.0 - t / t_end;
    let lie = lie_derivatives(&spec.barrier, sys, x);
    let h = spec.barrier.value(x);
    let rhs = -lie.lf_h - (spec.c_theta + 2.0 / t_end) * h / theta;
    Ok((lie.lg_h, rhs))
}

pub fn pt_clf_baseline_control(
    spec: &ControllerSpec,
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, QpStatus)> {
    if spec.kind != ControllerKind::PtClfBaseline {
        return Err(Error::Contract("spec.kind must be pt_clf_baseline".into()));
    }
    let (w, rhs) = pt_clf_constraint(spec, sys, x, t)?;
    let m = sys.input_dim();
    let zero = DVector::zeros(m);
    match spec.input_set {
        InputSet::Ball2 { u_max, .. } => {
            let sol = solve_min_norm_ball(&w.transpose(), rhs, u_max);
            match sol.status {
                QpStatus::Optimal => Ok((sol.u, QpStatus::Optimal)),
                _ => Ok((spec.input_set.support_point(&w), QpStatus::Infeasible)),
            }
        }
        InputSet::Box { u_max, .. } => {
            solve_constraint_box(&w, rhs, &zero, u_max, &spec.input_set)
        }
    }
}

/// Min-deviation QP with one affine row over a box, with the best-effort
/// fallback on infeasibility.
fn solve_constraint_box(
    w: &RowDVector<f64>,
    rhs: f64,
    u_nom: &DVector<f64>,
    u_max: f64,
    set: &InputSet,
) -> Result<(DVector<f64>, QpStatus)> {
    let m = w.len();
    // constraint already met by the nominal: skip the solve
    let clipped = clip_to_set(u_nom, set);
    if (w * &clipped)[0] >= rhs - 1e-12 {
        return Ok((clipped, QpStatus::Optimal));
    }
    // exact feasibility certificate for one row over a box: the support
    // function bounds w.u from above, so rhs beyond it means no solution
    if rhs > set.support(w) + 1e-12 {
        return Ok((set.support_point(w), QpStatus::Infeasible));
    }
    let h = nalgebra::DMatrix::identity(m, m) * 2.0;
    let q = u_nom * -2.0;
    // the engine takes rows as Gu <= g; negate `w.u >= rhs`
    let p = QpProblem::new(h, q)?
        .with_inequalities(
            nalgebra::DMatrix::from_rows(&[-w.clone()]),
            DVector::from_row_slice(&[-rhs]),
        )?
        .with_bounds(
            DVector::from_element(m, -u_max),
            DVector::from_element(m, u_max),
        )?;
    let sol = solve_qp(&p)?;
    match sol.status {
        QpStatus::Optimal => Ok((sol.u, QpStatus::Optimal)),
        QpStatus::Infeasible => Ok((set.support_point(w), QpStatus::Infeasible)),
        QpStatus::MaxIterations => Err(Error::Numerical(
            "QP iteration cap reached in a one-row controller subproblem".into(),
        )),
    }
}

/// Projects `u` onto the input set (componentwise clamp for the box,
/// radial scaling for the ball).
pub fn clip_to_set(u: &DVector<f64>, set: &InputSet) -> DVector<f64> {
    match set {
        InputSet::Box { u_max, .. } => u.map(|v| v.clamp(-*u_max, *u_max)),
        InputSet::Ball2 { u_max, .. } => {
            let n = u.norm();
            if n > *u_max {
                u * (*u_max / n)
            } else {
                u.clone()
            }
        }
    }
}

/// A feedback law the simulator can drive, with accessors for logging.
pub trait Controller {
    fn control(
        &mut self,
        sys: &ControlAffineSystem,
        x: &DVector<f64>,
        t: f64,
    ) -> Result<(DVector<f64>, QpStatus)>;
    fn barrier(&self) -> &Barrier;
    fn schedule(&self) -> &ConstrictionSchedule;
    fn aux_barriers(&self) -> &[Barrier] {
        &[]
    }
}

impl Controller for ControllerSpec {
    fn control(
        &mut self,
        sys: &ControlAffineSystem,
        x: &DVector<f64>,
        t: f64,
    ) -> Result<(DVector<f64>, QpStatus)> {
        match self.kind {
            ControllerKind::CbfQp => cbf_qp_control(self, sys, x, t),
            ControllerKind::Hocbf2Qp => hocbf_qp_control(self, sys, x, t),
            ControllerKind::PtClfBaseline => pt_clf_baseline_control(self, sys, x, t),
        }
    }

    fn barrier(&self) -> &Barrier {
        &self.barrier
    }

    fn schedule(&self) -> &ConstrictionSchedule {
        &self.schedule
    }

    fn aux_barriers(&self) -> &[Barrier] {
        &self.aux_barriers
    }
}

/// Applies the nominal law alone (clipped to the input set); used to show
/// what the safety filter adds.
pub struct NominalController {
    pub input_set: InputSet,
    pub nominal: NominalFn,
    barrier: Barrier,
    schedule: ConstrictionSchedule,
}

impl NominalController {
    pub fn new(
        input_set: InputSet,
        nominal: NominalFn,
        barrier: Barrier,
        schedule: ConstrictionSchedule,
    ) -> Self {
        Self {
            input_set,
            nominal,
            barrier,
            schedule,
        }
    }
}

impl Controller for NominalController {
    fn control(
        &mut self,
        _sys: &ControlAffineSystem,
        x: &DVector<f64>,
        _t: f64,
    ) -> Result<(DVector<f64>, QpStatus)> {
        Ok((clip_to_set(&(self.nominal)(x), &self.input_set), QpStatus::Optimal))
    }

    fn barrier(&self) -> &Barrier {
        &self.barrier
    }

    fn schedule(&self) -> &ConstrictionSchedule {
        &self.schedule
    }
}

/// Closed-loop record: one row per step plus a terminal row (the terminal
/// input and status duplicate the last step so all lists stay equal length).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub tube_values: Vec<f64>,
    pub barrier_values: Vec<f64>,
    /// One value series per auxiliary barrier.
    pub aux_barriers: Vec<Vec<f64>>,
    pub solver_statuses: Vec<QpStatus>,
    pub infeasible_steps: Vec<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn terminal_state(&self) -> &DVector<f64> {
        self.states.last().expect("non-empty trajectory")
    }

    pub fn peak_input_norm(&self) -> f64 {
        self.inputs.iter().map(|u| u.norm()).fold(0.0, f64::max)
    }

    pub fn min_tube_value(&self) -> f64 {
        self.tube_values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Barrier value at a given time, by nearest recorded step.
    pub fn barrier_at(&self, t: f64) -> f64 {
        let idx = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| {
                (a.1 - t).abs().partial_cmp(&(b.1 - t).abs()).unwrap()
            })
            .map(|(i, _)| i)
            .expect("non-empty trajectory");
        self.barrier_values[idx]
    }
}

/// Fixed-step RK4 with zero-order-hold inputs: the controller is evaluated
/// once per step at the step start and held through the stages. Infeasible
/// steps apply the controller's fallback input and are logged, never fatal;
/// only a non-finite state aborts.
pub fn simulate(
    sys: &ControlAffineSystem,
    ctrl: &mut dyn Controller,
    x0: &DVector<f64>,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if dt <= 0.0 {
        return Err(Error::Contract("dt must be positive".into()));
    }
    if t_end < dt {
        return Err(Error::Contract("t_end must be at least dt".into()));
    }
    if x0.len() != sys.state_dim() {
        return Err(Error::Contract(format!(
            "x0 has dimension {}, system expects {}",
            x0.len(),
            sys.state_dim()
        )));
    }
    let steps = (t_end / dt).round().max(1.0) as usize;
    let n_aux = ctrl.aux_barriers().len();
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        tube_values: Vec::with_capacity(steps + 1),
        barrier_values: Vec::with_capacity(steps + 1),
        aux_barriers: vec![Vec::with_capacity(steps + 1); n_aux],
        solver_statuses: Vec::with_capacity(steps + 1),
        infeasible_steps: Vec::new(),
    };
    let mut x = x0.clone();
    let mut last: Option<(DVector<f64>, QpStatus)> = None;
    for k in 0..steps {
        let t = k as f64 * dt;
        let (u, status) = ctrl.control(sys, &x, t)?;
        record(&mut traj, ctrl, t, &x, &u, status);
        if status == QpStatus::Infeasible {
            traj.infeasible_steps.push(k);
        }
        let xn = rk4_step(sys, &x, &u, dt);
        if xn.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationAborted {
                step: k,
                time: t,
                reason: "state became non-finite".into(),
            });
        }
        x = xn;
        last = Some((u, status));
    }
    let (u_last, status_last) = last.expect("at least one step");
    record(&mut traj, ctrl, steps as f64 * dt, &x, &u_last, status_last);
    Ok(traj)
}

fn record(
    traj: &mut Trajectory,
    ctrl: &dyn Controller,
    t: f64,
    x: &DVector<f64>,
    u: &DVector<f64>,
    status: QpStatus,
) {
    let h = ctrl.barrier().value(x);
    let r = ctrl.schedule().eval(t).r;
    traj.times.push(t);
    traj.states.push(x.clone());
    traj.inputs.push(u.clone());
    traj.barrier_values.push(h);
    traj.tube_values.push(h + r);
    for (series, b) in traj.aux_barriers.iter_mut().zip(ctrl.aux_barriers()) {
        series.push(b.value(x));
    }
    traj.solver_statuses.push(status);
}

/// One classical RK4 step of `xdot = f(x) + g(x)u` with constant `u`.
pub fn rk4_step(
    sys: &ControlAffineSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    let f = |x: &DVector<f64>| sys.drift(x) + sys.input_map(x) * u;
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (dt / 2.0)));
    let k3 = f(&(x + &k2 * (dt / 2.0)));
    let k4 = f(&(x + &k3 * dt));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{position_barrier, quadratic_barrier, quadratic_barrier_shifted};
    use crate::dynamics;
    use crate::schedule::initial_relaxation;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn one_d_system() -> ControlAffineSystem {
        dynamics::linear_system(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap()
    }

    fn one_d_spec(r0: f64, deadline: f64, u_max: f64) -> ControllerSpec {
        let bar = quadratic_barrier(1.0, DMatrix::identity(1, 1)).unwrap();
        let sched = ConstrictionSchedule::new(ScheduleKind::Linear, r0, deadline).unwrap();
        ControllerSpec::new(
            ControllerKind::CbfQp,
            InputSet::Ball2 { u_max, dim: 1 },
            bar,
            sched,
        )
    }

    #[test]
    fn cbf_inactive_inside_tube_gives_zero() {
        let sys = one_d_system();
        let spec = one_d_spec(0.0, 1.0, 2.0);
        let x = DVector::from_row_slice(&[0.5]); // h = 0.75 > 0, drift-free
        let (u, status) = cbf_qp_control(&spec, &sys, &x, 0.2).unwrap();
        assert_eq!(status, QpStatus::Optimal);
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn cbf_one_dimensional_hand_kkt() {
        // xdot = u, h = 1 - x^2, boundary state, |rdot| = r0/T:
        // u = -sign(x) (r0/T) / (2|x|), feasible iff r0/T <= 2|x| u_max
        let sys = one_d_system();
        let spec = one_d_spec(3.0, 2.0, 1.0);
        let x = DVector::from_row_slice(&[-2.0]); // h = -3 = -r(0): on the boundary
        let (u, status) = cbf_qp_control(&spec, &sys, &x, 0.0).unwrap();
        assert_eq!(status, QpStatus::Optimal);
        assert_abs_diff_eq!(u[0], 1.5 / 4.0, epsilon = 1e-12);

        // shrink the input set below the requirement -> infeasible, fallback
        // pushes at the limit in the constraint direction
        let tight = one_d_spec(3.0, 2.0, 0.3);
        let (u, status) = cbf_qp_control(&tight, &sys, &x, 0.0).unwrap();
        assert_eq!(status, QpStatus::Infeasible);
        assert_abs_diff_eq!(u[0], 0.3, epsilon = 1e-12);
    }

    #[test]
    fn standard_cbf_reduction_when_r0_zero() {
        // with r0 = 0 the constraint must equal the static CBF condition
        // L_f h + L_g h u >= -alpha h, coefficient for coefficient
        let sys = dynamics::pendulum();
        let bar = quadratic_barrier_shifted(
            0.5,
            DMatrix::identity(2, 2),
            DVector::from_row_slice(&[PI, 0.0]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let sched = ConstrictionSchedule::new(ScheduleKind::Linear, 0.0, 3.0).unwrap();
            let spec = ControllerSpec::new(
                ControllerKind::CbfQp,
                InputSet::Ball2 { u_max: 2.0, dim: 1 },
                quadratic_barrier_shifted(
                    0.5,
                    DMatrix::identity(2, 2),
                    DVector::from_row_slice(&[PI, 0.0]),
                )
                .unwrap(),
                sched,
            );
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let t: f64 = rng.gen_range(0.0..6.0);
            let (w, rhs) = cbf_constraint(&spec, &sys, &x, t);
            let lie = lie_derivatives(&bar, &sys, &x);
            let static_rhs = -(lie.lf_h + spec.alpha * bar.value(&x));
            assert!((rhs - static_rhs).abs() <= 1e-12);
            assert!((w.clone() - lie.lg_h).norm() <= 1e-12);
        }
    }

    #[test]
    fn multiagent_input_stays_under_stacked_limit() {
        let sys = dynamics::multiagent(8).unwrap();
        let bar = quadratic_barrier(0.5, DMatrix::identity(16, 16)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x0 = {
            let raw = DVector::from_fn(16, |_, _| rng.gen_range(-1.0..1.0));
            &raw * (51.16f64.sqrt() / raw.norm())
        };
        let r0 = initial_relaxation(&bar, &x0);
        let sched = ConstrictionSchedule::new(ScheduleKind::Linear, r0, 6.4).unwrap();
        let spec = ControllerSpec::new(
            ControllerKind::CbfQp,
            InputSet::Box { u_max: 2.0, dim: 8 },
            bar,
            sched,
        );
        let (u, status) = cbf_qp_control(&spec, &sys, &x0, 0.0).unwrap();
        assert_eq!(status, QpStatus::Optimal);
        assert!(u.amax() <= 2.0 + 1e-9);
        assert!(u.norm() <= 8.0f64.sqrt() * 2.0 + 1e-9);
        assert!(u.norm() <= 28.28);
    }

    fn hocbf_spec() -> ControllerSpec {
        let bar = position_barrier(0.25, 4).unwrap();
        let sched = ConstrictionSchedule::new(
            ScheduleKind::OffsetQuadratic { delta: 0.125 },
            12.75,
            25.0,
        )
        .unwrap();
        ControllerSpec::new(
            ControllerKind::Hocbf2Qp,
            InputSet::Box { u_max: 2.0, dim: 2 },
            bar,
            sched,
        )
        .with_gammas(0.9, 0.9)
        .unwrap()
        .with_nominal(pd_nominal(0.01, 0.05))
    }

    #[test]
    fn hocbf_initial_state_on_tube_boundary() {
        let sys = dynamics::double_integrator();
        let spec = hocbf_spec();
        let x0 = DVector::from_row_slice(&[3.0, 2.0, -0.3, -0.1]);
        let (_, _, psi0, _) = hocbf_constraint(&spec, &sys, &x0, 0.0).unwrap();
        assert_abs_diff_eq!(psi0, 0.0, epsilon = 1e-12);
        let (u, status) = hocbf_qp_control(&spec, &sys, &x0, 0.0).unwrap();
        assert_eq!(status, QpStatus::Optimal);
        assert!(u.amax() <= 2.0 + 1e-9);
    }

    #[test]
    fn hocbf_at_rest_at_center_depends_on_schedule_only() {
        // p = 0, v = 0: L_g L_f h = -2 p' = 0 and L_f^2 h = 0, so the
        // constraint holds from the schedule terms alone near the deadline
        let sys = dynamics::double_integrator();
        let spec = hocbf_spec();
        let x = DVector::zeros(4);
        let (w, rhs, _, psi1) = hocbf_constraint(&spec, &sys, &x, 24.0).unwrap();
        assert!(w.norm() <= 1e-12);
        // rhs = -(rddot + gamma1 rdot + gamma2 psi1), computed by hand
        let s = spec.schedule().eval(24.0);
        let expect = -(s.rddot + 0.9 * s.rdot + 0.9 * psi1);
        assert_abs_diff_eq!(rhs, expect, epsilon = 1e-12);
        assert!(rhs <= 0.0, "0.u >= {rhs} must hold vacuously");
        let (u, status) = hocbf_qp_control(&spec, &sys, &x, 24.0).unwrap();
        assert_eq!(status, QpStatus::Optimal);
        // nominal at the origin is zero; constraint inactive, so u = u_nom
        assert!(u.norm() <= 1e-12);
    }

    #[test]
    fn hocbf_rejects_linear_schedule_and_rd1_barrier() {
        let sys = dynamics::double_integrator();
        let bar = position_barrier(0.25, 4).unwrap();
        let sched = ConstrictionSchedule::new(ScheduleKind::Linear, 12.75, 25.0).unwrap();
        let spec = ControllerSpec::new(
            ControllerKind::Hocbf2Qp,
            InputSet::Box { u_max: 2.0, dim: 2 },
            bar,
            sched,
        );
        let x = DVector::from_row_slice(&[3.0, 2.0, 0.0, 0.0]);
        assert!(hocbf_constraint(&spec, &sys, &x, 0.0).is_err());

        // a full-state barrier on the double integrator has L_g h != 0
        let bar = quadratic_barrier(0.25, DMatrix::identity(4, 4)).unwrap();
        let sched = ConstrictionSchedule::new(
            ScheduleKind::OffsetQuadratic { delta: 0.1 },
            5.0,
            10.0,
        )
        .unwrap();
        let spec = ControllerSpec::new(
            ControllerKind::Hocbf2Qp,
            InputSet::Box { u_max: 2.0, dim: 2 },
            bar,
            sched,
        );
        // nonzero velocity so L_g h is visibly nonzero
        let x = DVector::from_row_slice(&[3.0, 2.0, 0.5, -0.2]);
        assert!(hocbf_constraint(&spec, &sys, &x, 0.0).is_err());
    }

    fn baseline_spec() -> ControllerSpec {
        let bar = quadratic_barrier(0.5, DMatrix::identity(16, 16)).unwrap();
        let sched = ConstrictionSchedule::new(ScheduleKind::Linear, 50.0, 6.4).unwrap();
        ControllerSpec::new(
            ControllerKind::PtClfBaseline,
            InputSet::Box { u_max: 2.0, dim: 8 },
            bar,
            sched,
        )
    }

    #[test]
    fn baseline_reduces_to_plain_clf_at_t_zero() {
        let sys = dynamics::multiagent(8).unwrap();
        let spec = baseline_spec();
        let x = DVector::from_element(16, 1.0);
        let (w, rhs) = pt_clf_constraint(&spec, &sys, &x, 0.0).unwrap();
        let bar = quadratic_barrier(0.5, DMatrix::identity(16, 16)).unwrap();
        let lie = lie_derivatives(&bar, &sys, &x);
        // theta = 1: ordinary exponential decay at rate c_theta (+2/T term)
        let expect = -lie.lf_h - (2.0 + 2.0 / 6.4) * bar.value(&x);
        assert_abs_diff_eq!(rhs, expect, epsilon = 1e-10);
        assert!((w.clone() - lie.lg_h).norm() <= 1e-12);
    }

    #[test]
    fn baseline_demand_diverges_toward_deadline() {
        let sys = dynamics::multiagent(8).unwrap();
        let spec = baseline_spec();
        let x = DVector::from_element(16, 1.0); // h = 0.5 - 16 < 0
        let mut prev = f64::NEG_INFINITY;
        for t in [0.0, 2.0, 4.0, 6.0, 6.3, 6.39] {
            let (_, rhs) = pt_clf_constraint(&spec, &sys, &x, t).unwrap();
            assert!(rhs > prev, "rhs must grow as t -> T");
            prev = rhs;
        }
        assert!(pt_clf_constraint(&spec, &sys, &x, 6.4).is_err());
        assert!(pt_clf_constraint(&spec, &sys, &x, 7.0).is_err());
    }

    #[test]
    fn baseline_saturates_when_demand_exceeds_authority() {
        let sys = dynamics::multiagent(8).unwrap();
        let spec = baseline_spec();
        let x = DVector::from_element(16, 1.0);
        let (u, status) = pt_clf_baseline_control(&spec, &sys, &x, 6.39).unwrap();
        assert_eq!(status, QpStatus::Infeasible);
        assert!(u.amax() <= 2.0 + 1e-12);
        assert!(u.norm() >= 0.95 * 8.0f64.sqrt() * 2.0);
    }

    #[test]
    fn simulate_zero_dynamics_constant() {
        let sys = dynamics::linear_system(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let bar = quadratic_barrier(1.0, DMatrix::identity(2, 2)).unwrap();
        let sched = ConstrictionSchedule::new(ScheduleKind::Linear, 1.0, 1.0).unwrap();
        let mut ctrl = NominalController::new(
            InputSet::Ball2 { u_max: 1.0, dim: 1 },
            Box::new(|_x: &DVector<f64>| DVector::zeros(1)),
            bar,
            sched,
        );
        let x0 = DVector::from_row_slice(&[0.3, -0.7]);
        let traj = simulate(&sys, &mut ctrl, &x0, 1.0, 0.1).unwrap();
        assert_eq!(traj.len(), 11);
        for x in &traj.states {
            assert_eq!(x, &x0);
        }
        // uniform strictly-increasing times and equal-length lists
        for w in traj.times.windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], 0.1, epsilon = 1e-12);
        }
        assert_eq!(traj.states.len(), traj.len());
        assert_eq!(traj.inputs.len(), traj.len());
        assert_eq!(traj.tube_values.len(), traj.len());
        assert_eq!(traj.barrier_values.len(), traj.len());
        assert_eq!(traj.solver_statuses.len(), traj.len());
        assert!(traj.infeasible_steps.is_empty());
    }

    #[test]
    fn simulate_matches_exponential_decay() {
        let sys = dynamics::linear_system(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let bar = quadratic_barrier(1.0, DMatrix::identity(1, 1)).unwrap();
        let sched = ConstrictionSchedule::new(ScheduleKind::Linear, 0.0, 1.0).unwrap();
        let mut ctrl = NominalController::new(
            InputSet::Ball2 { u_max: 1.0, dim: 1 },
            Box::new(|_x: &DVector<f64>| DVector::zeros(1)),
            bar,
            sched,
        );
        let x0 = DVector::from_row_slice(&[2.0]);
        let traj = simulate(&sys, &mut ctrl, &x0, 1.0, 0.01).unwrap();
        assert!((traj.terminal_state()[0] - 2.0 * (-1.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn simulate_aborts_on_blowup() {
        let sys = ControlAffineSystem::new(
            1,
            1,
            Box::new(|x: &DVector<f64>| DVector::from_row_slice(&[x[0] * x[0]])),
            Box::new(|_x: &DVector<f64>| DMatrix::zeros(1, 1)),
            "quadratic-blowup",
        );
        let bar = quadratic_barrier(1.0, DMatrix::identity(1, 1)).unwrap();
        let sched = ConstrictionSchedule::new(ScheduleKind::Linear, 0.0, 1.0).unwrap();
        let mut ctrl = NominalController::new(
            InputSet::Ball2 { u_max: 1.0, dim: 1 },
            Box::new(|_x: &DVector<f64>| DVector::zeros(1)),
            bar,
            sched,
        );
        let x0 = DVector::from_row_slice(&[5.0]);
        let err = simulate(&sys, &mut ctrl, &x0, 5.0, 0.1).unwrap_err();
        match err {
            Error::SimulationAborted { reason, .. } => {
                assert!(reason.contains("non-finite"));
            }
            other => panic!("expected SimulationAborted, got {other:?}"),
        }
    }

    #[test]
    fn simulate_validates_arguments() {
        let sys = one_d_system();
        let mut spec = one_d_spec(0.0, 1.0, 1.0);
        let x0 = DVector::zeros(1);
        assert!(simulate(&sys, &mut spec, &x0, 1.0, 0.0).is_err());
        assert!(simulate(&sys, &mut spec, &x0, 0.05, 0.1).is_err());
        assert!(simulate(&sys, &mut spec, &DVector::zeros(2), 1.0, 0.1).is_err());
    }

    #[test]
    fn one_d_closed_loop_tracks_tube_floor() {
        // recovery run: x0 = -2 (h = -3), r0 = 3, T = 2, ample authority
        let sys = one_d_system();
        let mut spec = one_d_spec(3.0, 2.0, 2.0);
        let x0 = DVector::from_row_slice(&[-2.0]);
        let traj = simulate(&sys, &mut spec, &x0, 4.0, 1e-3).unwrap();
        assert!(traj.infeasible_steps.is_empty());
        assert!(traj.min_tube_value() >= -1e-3);
        assert!(traj.barrier_at(2.0) >= -1e-3, "inside C at the deadline");
        // post-deadline invariance on [T, 2T]
        for (i, &t) in traj.times.iter().enumerate() {
            if t >= 2.0 {
                assert!(traj.barrier_values[i] >= -1e-3);
            }
        }
        // inputs respect the ball set
        for u in &traj.inputs {
            assert!(u.norm() <= 2.0 + 1e-9);
        }
    }
}
