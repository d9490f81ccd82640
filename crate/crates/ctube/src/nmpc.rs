//! Receding-horizon planner for the unicycle reach-avoid problem.
//!
//! Direct single-shooting transcription with Euler discretization: the
//! decision variable is the stacked input sequence, states are rolled out
//! from the current state, and the tube and obstacle constraints are imposed
//! at every knot. The nonlinear program is solved by sequential linearization
//! QPs with a trust region and a penalty merit function.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;

use crate::barrier::Barrier;
use crate::control::Trajectory;
use crate::dynamics::ControlAffineSystem;
use crate::error::{Error, Result};
use crate::qpsolve::{solve_qp, QpProblem, QpStatus};
use crate::schedule::ConstrictionSchedule;

const MAX_SQP_ITERATIONS: usize = 30;
const INCREMENT_TOL: f64 = 1e-6;
const MERIT_PENALTY: f64 = 1e3;
const SLACK_WEIGHT: f64 = 1e4;

pub struct NmpcProblem {
    sys: ControlAffineSystem,
    reach_barrier: Barrier,
    schedule: ConstrictionSchedule,
    obstacle_barrier: Barrier,
    pub horizon: f64,
    pub plan_dt: f64,
    pub beta: f64,
    pub v_max: f64,
    pub omega_max: f64,
    /// Knot-wise tightening of the obstacle constraint, `h_obs >= margin`.
    /// For a convex quadratic obstacle barrier the path between two knots is
    /// a chord along which `h_obs` can sag below the knot values by at most
    /// `||dp||^2 / 4 <= (v_max plan_dt)^2 / 4`; the default margin of
    /// `2 (v_max plan_dt)^2` additionally absorbs the closed-loop deviation
    /// from the plan between replans, so inter-knot `h_obs >= 0` holds in
    /// practice, not just at knots.
    pub obstacle_margin: f64,
}

impl NmpcProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sys: ControlAffineSystem,
        reach_barrier: Barrier,
        schedule: ConstrictionSchedule,
        obstacle_barrier: Barrier,
        horizon: f64,
        plan_dt: f64,
        beta: f64,
        v_max: f64,
        omega_max: f64,
    ) -> Result<Self> {
        if !(plan_dt > 0.0 && horizon > plan_dt) {
            return Err(Error::Contract("need horizon > plan_dt > 0".into()));
        }
        if beta < 0.0 {
            return Err(Error::Contract("terminal weight beta must be >= 0".into()));
        }
        if v_max <= 0.0 || omega_max <= 0.0 {
            return Err(Error::Contract("input bounds must be positive".into()));
        }
        let k = (horizon / plan_dt).round() as usize;
        if k < 2 {
            return Err(Error::Contract("horizon must cover at least 2 knots".into()));
        }
        if sys.input_dim() != 2 {
            return Err(Error::Contract("planner expects (v, omega) inputs".into()));
        }
        Ok(Self {
            sys,
            reach_barrier,
            schedule,
            obstacle_barrier,
            horizon,
            plan_dt,
            beta,
            v_max,
            omega_max,
            obstacle_margin: 2.0 * (v_max * plan_dt).powi(2),
        })
    }

    pub fn with_obstacle_margin(mut self, margin: f64) -> Result<Self> {
        if margin < 0.0 {
            return Err(Error::Contract("obstacle margin must be nonnegative".into()));
        }
        self.obstacle_margin = margin;
        Ok(self)
    }

    pub fn knots(&self) -> usize {
        (self.horizon / self.plan_dt).round() as usize
    }

    pub fn schedule(&self) -> &ConstrictionSchedule {
        &self.schedule
    }

    pub fn reach_barrier(&self) -> &Barrier {
        &self.reach_barrier
    }

    pub fn obstacle_barrier(&self) -> &Barrier {
        &self.obstacle_barrier
    }

    pub fn sys(&self) -> &ControlAffineSystem {
        &self.sys
    }

    fn input_lower(&self, i: usize) -> f64 {
        if i % 2 == 0 {
            -self.v_max
        } else {
            -self.omega_max
        }
    }

    fn input_upper(&self, i: usize) -> f64 {
        if i % 2 == 0 {
            self.v_max
        } else {
            self.omega_max
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    /// K inputs, each `(v, omega)`.
    pub input_sequence: Vec<DVector<f64>>,
    /// K+1 states from the Euler rollout; `predicted_states[0]` is the
    /// current state.
    pub predicted_states: Vec<DVector<f64>>,
    pub objective: f64,
    pub sqp_iterations: usize,
    pub converged: bool,
    /// Maximum violation of the tube and obstacle constraints (without the
    /// internal obstacle margin) over the horizon at the final iterate.
    pub constraint_violation: f64,
}

/// Per-replan diagnostics written alongside the trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct PlanDiagnostic {
    pub time: f64,
    pub iterations: usize,
    pub objective: f64,
    pub violation: f64,
    pub converged: bool,
    pub failed: bool,
}

/// Euler rollout of an input sequence from `x`.
fn rollout(p: &NmpcProblem, x: &DVector<f64>, inputs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x.clone());
    let mut cur = x.clone();
    for u in inputs {
        let xdot = p.sys.drift(&cur) + p.sys.input_map(&cur) * u;
        cur += xdot * p.plan_dt;
        states.push(cur.clone());
    }
    states
}

fn objective(p: &NmpcProblem, inputs: &[DVector<f64>], states: &[DVector<f64>]) -> f64 {
    let effort: f64 = inputs.iter().map(|u| p.plan_dt * u.norm_squared()).sum();
    let pk = states.last().expect("rollout nonempty");
    effort + p.beta * (pk[0] * pk[0] + pk[1] * pk[1])
}

/// Sum (for the merit function) and max (for reporting) of knot-wise
/// constraint violations. The merit sum penalizes the margin-tightened
/// obstacle row that the planner actually enforces; the reported max
/// measures the real tube and obstacle constraints, since exhausting part
/// of the internal margin is not a violation of the problem.
fn violations(p: &NmpcProblem, states: &[DVector<f64>], t: f64) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for (k, x) in states.iter().enumerate().skip(1) {
        let tau = t + k as f64 * p.plan_dt;
        let tube = p.reach_barrier.value(x) + p.schedule.eval(tau).r;
        let obs = p.obstacle_barrier.value(x);
        sum += (-tube).max(0.0) + (-(obs - p.obstacle_margin)).max(0.0);
        max = max.max((-tube).max(0.0)).max((-obs).max(0.0));
    }
    (sum, max)
}

fn merit(p: &NmpcProblem, inputs: &[DVector<f64>], states: &[DVector<f64>], t: f64) -> f64 {
    objective(p, inputs, states) + MERIT_PENALTY * violations(p, states, t).0
}

struct LinearizedQp {
    h: DMatrix<f64>,
    q: DVector<f64>,
    rows: DMatrix<f64>,
    rhs: DVector<f64>,
}

/// Builds the QP in the input increments `d`: quadratic model of the
/// objective plus linearized tube/obstacle rows `a_k . d >= -psi_k`.
fn linearize(
    p: &NmpcProblem,
    inputs: &[DVector<f64>],
    states: &[DVector<f64>],
    t: f64,
) -> Result<LinearizedQp> {
    let k = inputs.len();
    let nv = 2 * k;
    let n = p.sys.state_dim();

    // sensitivities S_j = d x_j / d U, propagated alongside the rollout
    let mut sens: Vec<DMatrix<f64>> = Vec::with_capacity(k + 1);
    sens.push(DMatrix::zeros(n, nv));
    for j in 0..k {
        let x = &states[j];
        let u = &inputs[j];
        let a_drift = p.sys.drift_jacobian(x).ok_or_else(|| {
            Error::Contract(format!("system '{}' has no drift Jacobian", p.sys.label()))
        })?;
        let a_input = p.sys.input_map_jacobian(x, u).ok_or_else(|| {
            Error::Contract(format!(
                "system '{}' has no input-map Jacobian",
                p.sys.label()
            ))
        })?;
        let a = a_drift + a_input;
        let b = p.sys.input_map(x);
        let mut next = &sens[j] + (&a * &sens[j]) * p.plan_dt;
        next.view_mut((0, 2 * j), (n, 2))
            .add_assign(&(&b * p.plan_dt));
        sens.push(next);
    }

    // objective model: sum dt ||u_j + d_j||^2 + beta ||p_K + M d||^2
    let m_term = sens[k].rows(0, 2).into_owned();
    let mut h = DMatrix::identity(nv, nv) * (2.0 * p.plan_dt);
    h += m_term.transpose() * &m_term * (2.0 * p.beta);
    let pk = states[k].rows(0, 2).into_owned();
    let mut q = DVector::zeros(nv);
    for j in 0..k {
        q[2 * j] = 2.0 * p.plan_dt * inputs[j][0];
        q[2 * j + 1] = 2.0 * p.plan_dt * inputs[j][1];
    }
    q += m_term.transpose() * pk * (2.0 * p.beta);

    // constraint rows at knots 1..K
    let mut rows = DMatrix::zeros(2 * k, nv);
    let mut rhs = DVector::zeros(2 * k);
    for j in 1..=k {
        let x = &states[j];
        let tau = t + j as f64 * p.plan_dt;
        let tube = p.reach_barrier.value(x) + p.schedule.eval(tau).r;
        let grad_tube = RowDVector::from_iterator(n, p.reach_barrier.gradient(x).iter().cloned());
        rows.row_mut(2 * (j - 1))
            .copy_from(&(&grad_tube * &sens[j]));
        rhs[2 * (j - 1)] = -tube;
        let obs = p.obstacle_barrier.value(x) - p.obstacle_margin;
        let grad_obs =
            RowDVector::from_iterator(n, p.obstacle_barrier.gradient(x).iter().cloned());
        rows.row_mut(2 * (j - 1) + 1)
            .copy_from(&(&grad_obs * &sens[j]));
        rhs[2 * (j - 1) + 1] = -obs;
    }

    Ok(LinearizedQp { h, q, rows, rhs })
}

/// Solves the linearized subproblem within a trust-region box. Falls back to
/// a slack-softened QP (quadratic penalty on barrier-row slacks) if the hard
/// QP is infeasible; returns `None` only if even the softened QP fails.
fn solve_subproblem(
    p: &NmpcProblem,
    lin: &LinearizedQp,
    inputs: &[DVector<f64>],
    radius: f64,
) -> Result<Option<DVector<f64>>> {
    let nv = lin.q.len();
    let mut lo = DVector::zeros(nv);
    let mut hi = DVector::zeros(nv);
    for i in 0..nv {
        let u_i = inputs[i / 2][i % 2];
        lo[i] = (p.input_lower(i) - u_i).max(-radius);
        hi[i] = (p.input_upper(i) - u_i).min(radius);
    }
    // the engine takes rows as Gu <= g; our rows mean a.d >= b
    let hard = QpProblem::new(lin.h.clone(), lin.q.clone())?
        .with_inequalities(-lin.rows.clone(), -lin.rhs.clone())?
        .with_bounds(lo.clone(), hi.clone())?;
    // a numerically degenerate near-infeasible hard problem is handled the
    // same way as a certified infeasible one: fall through to the slacks
    if let Ok(sol) = solve_qp(&hard) {
        if sol.status == QpStatus::Optimal {
            return Ok(Some(sol.u));
        }
    }

    // soften: minimize the same model plus SLACK_WEIGHT * ||s||^2 with
    // rows a.d + s_i >= b, s >= 0
    let nr = lin.rhs.len();
    let nt = nv + nr;
    let mut h = DMatrix::zeros(nt, nt);
    h.view_mut((0, 0), (nv, nv)).copy_from(&lin.h);
    for i in 0..nr {
        h[(nv + i, nv + i)] = 2.0 * SLACK_WEIGHT;
    }
    let mut q = DVector::zeros(nt);
    q.rows_mut(0, nv).copy_from(&lin.q);
    // a.d + s >= b becomes -a.d - s <= -b in engine form
    let mut rows = DMatrix::zeros(nr, nt);
    rows.view_mut((0, 0), (nr, nv)).copy_from(&(-lin.rows.clone()));
    for i in 0..nr {
        rows[(i, nv + i)] = -1.0;
    }
    let mut lo_s = DVector::from_element(nt, 0.0);
    lo_s.rows_mut(0, nv).copy_from(&lo);
    let mut hi_s = DVector::from_element(nt, 1e6);
    hi_s.rows_mut(0, nv).copy_from(&hi);
    let soft = QpProblem::new(h, q)?
        .with_inequalities(rows, -lin.rhs.clone())?
        .with_bounds(lo_s, hi_s)?;
    let sol = solve_qp(&soft)?;
    if sol.status == QpStatus::Optimal {
        Ok(Some(sol.u.rows(0, nv).into_owned()))
    } else {
        Ok(None)
    }
}

/// One receding-horizon plan from state `x` at time `t`.
///
/// The warm start is the previous plan shifted by one knot (last input
/// duplicated); without one the initial guess is all-zero inputs.
pub fn plan(
    p: &NmpcProblem,
    x: &DVector<f64>,
    t: f64,
    warm_start: Option<&PlanResult>,
) -> Result<PlanResult> {
    let k = p.knots();
    if x.len() != p.sys.state_dim() {
        return Err(Error::Contract("state dimension mismatch".into()));
    }
    let mut inputs: Vec<DVector<f64>> = match warm_start {
        Some(prev) if prev.input_sequence.len() == k => {
            let mut shifted: Vec<DVector<f64>> =
                prev.input_sequence[1..].to_vec();
            shifted.push(prev.input_sequence.last().unwrap().clone());
            shifted
        }
        _ => vec![DVector::zeros(2); k],
    };
    // clamp the warm start into the input box
    for u in &mut inputs {
        u[0] = u[0].clamp(-p.v_max, p.v_max);
        u[1] = u[1].clamp(-p.omega_max, p.omega_max);
    }

    let mut states = rollout(p, x, &inputs);
    let mut radius = 0.5;
    let mut converged = false;
    let mut iterations = 0;
    let mut solved_any = false;
    'sqp: while iterations < MAX_SQP_ITERATIONS {
        iterations += 1;
        let lin = linearize(p, &inputs, &states, t)?;
        // trust-region loop: shrink until the step improves the merit
        loop {
            let d = match solve_subproblem(p, &lin, &inputs, radius)? {
                Some(d) => d,
                None => break 'sqp,
            };
            solved_any = true;
            if d.norm() <= INCREMENT_TOL {
                converged = true;
                break 'sqp;
            }
            let trial: Vec<DVector<f64>> = inputs
                .iter()
                .enumerate()
                .map(|(j, u)| u + d.rows(2 * j, 2))
                .collect();
            let trial_states = rollout(p, x, &trial);
            let m_old = merit(p, &inputs, &states, t);
            let m_new = merit(p, &trial, &trial_states, t);
            if m_new < m_old - 1e-12 {
                inputs = trial;
                states = trial_states;
                radius = (radius * 2.0).min(1.0);
                continue 'sqp;
            }
            radius *= 0.5;
            if radius < 1e-9 {
                break 'sqp;
            }
        }
    }
    if !solved_any {
        return Err(Error::Numerical(
            "planner subproblem infeasible even after softening".into(),
        ));
    }
    let (_, max_violation) = violations(p, &states, t);
    Ok(PlanResult {
        objective: objective(p, &inputs, &states),
        input_sequence: inputs,
        predicted_states: states,
        sqp_iterations: iterations,
        converged,
        constraint_violation: max_violation,
    })
}

/// Closed-loop receding-horizon run with Euler integration at `sim_dt`
/// (matching the planning discretization family), holding each plan's first
/// input between replans. Plan failures keep the previous input and are
/// logged as infeasible steps.
pub fn receding_horizon_run(
    p: &NmpcProblem,
    x0: &DVector<f64>,
    t_end: f64,
    sim_dt: f64,
    replan_every: usize,
    warm_start: bool,
) -> Result<(Trajectory, Vec<PlanDiagnostic>)> {
    if sim_dt <= 0.0 || sim_dt > p.plan_dt + 1e-12 {
        return Err(Error::Contract("need 0 < sim_dt <= plan_dt".into()));
    }
    if replan_every == 0 || replan_every as f64 * sim_dt > p.plan_dt + 1e-9 {
        return Err(Error::Contract(
            "need replan_every >= 1 with replan_every * sim_dt <= plan_dt".into(),
        ));
    }
    let steps = (t_end / sim_dt).round().max(1.0) as usize;
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        tube_values: Vec::with_capacity(steps + 1),
        barrier_values: Vec::with_capacity(steps + 1),
        aux_barriers: vec![Vec::with_capacity(steps + 1)],
        solver_statuses: Vec::with_capacity(steps + 1),
        infeasible_steps: Vec::new(),
    };
    let mut diagnostics = Vec::new();
    let mut x = x0.clone();
    let mut current_plan: Option<PlanResult> = None;
    let mut u = DVector::zeros(2);
    for k in 0..steps {
        let t = k as f64 * sim_dt;
        let mut status = QpStatus::Optimal;
        if k % replan_every == 0 {
            let warm = if warm_start {
                current_plan.as_ref()
            } else {
                None
            };
            match plan(p, &x, t, warm) {
                Ok(res) => {
                    u = res.input_sequence[0].clone();
                    diagnostics.push(PlanDiagnostic {
                        time: t,
                        iterations: res.sqp_iterations,
                        objective: res.objective,
                        violation: res.constraint_violation,
                        converged: res.converged,
                        failed: false,
                    });
                    current_plan = Some(res);
                }
                Err(_) => {
                    status = QpStatus::Infeasible;
                    diagnostics.push(PlanDiagnostic {
                        time: t,
                        iterations: 0,
                        objective: f64::NAN,
                        violation: f64::NAN,
                        converged: false,
                        failed: true,
                    });
                }
            }
        }
        let h = p.reach_barrier.value(&x);
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.inputs.push(u.clone());
        traj.barrier_values.push(h);
        traj.tube_values.push(h + p.schedule.eval(t).r);
        traj.aux_barriers[0].push(p.obstacle_barrier.value(&x));
        traj.solver_statuses.push(status);
        if status == QpStatus::Infeasible {
            traj.infeasible_steps.push(k);
        }
        let xdot = p.sys.drift(&x) + p.sys.input_map(&x) * &u;
        x += xdot * sim_dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SimulationAborted {
                step: k,
                time: t,
                reason: "state became non-finite".into(),
            });
        }
    }
    let t = steps as f64 * sim_dt;
    let h = p.reach_barrier.value(&x);
    traj.times.push(t);
    traj.states.push(x.clone());
    traj.inputs.push(u.clone());
    traj.barrier_values.push(h);
    traj.tube_values.push(h + p.schedule.eval(t).r);
    traj.aux_barriers[0].push(p.obstacle_barrier.value(&x));
    traj.solver_statuses
        .push(*traj.solver_statuses.last().unwrap());
    Ok((traj, diagnostics))
}

use std::ops::AddAssign;
