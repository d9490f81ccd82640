//! Builds library objects from a parsed [`Config`] and executes the CLI
//! operations: `run`, `certify`, and `authority-map`.
//!
//! Sections are validated lazily per operation so a config may carry only
//! what its operation needs (an authority-map config needs no controller).
//! Every validation failure names the offending `section.key`.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use ctube::barrier::{obstacle_barrier, position_barrier, quadratic_barrier_shifted, Barrier};
use ctube::certificate::{
    barrier_authority, sigma_min_linear_closed_form, sigma_min_sampled, t_min,
    FeasibilityCertificate, InputSet, SampleOptions,
};
use ctube::control::{
    pd_nominal, simulate, ControllerKind, ControllerSpec, NominalController, Trajectory,
};
use ctube::dynamics::{self, ControlAffineSystem};
use ctube::nmpc::{receding_horizon_run, NmpcProblem};
use ctube::qpsolve::QpStatus;
use ctube::schedule::{initial_relaxation, ConstrictionSchedule, ScheduleKind};

use crate::config::{Config, ConfigError, ConfigResult};

/// Command-line overrides applied on top of the config.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub no_warm_start: bool,
}

fn lib_err(e: ctube::error::Error) -> ConfigError {
    ConfigError::general(e.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> ConfigError {
    ConfigError::general(format!("cannot write {}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// builders
// ---------------------------------------------------------------------------

/// Builds the system; for linear families the `(A, B)` pair is also returned
/// so the closed-form certificate can use it.
pub fn build_system(
    cfg: &Config,
) -> ConfigResult<(ControlAffineSystem, Option<(DMatrix<f64>, DMatrix<f64>)>)> {
    let kind = cfg.string("system.kind")?;
    match kind.as_str() {
        "pendulum" => Ok((dynamics::pendulum(), None)),
        "double_integrator" => {
            let a = DMatrix::from_row_slice(
                4,
                4,
                &[
                    0.0, 0.0, 1.0, 0.0, //
                    0.0, 0.0, 0.0, 1.0, //
                    0.0, 0.0, 0.0, 0.0, //
                    0.0, 0.0, 0.0, 0.0,
                ],
            );
            let b = DMatrix::from_row_slice(
                4,
                2,
                &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            );
            Ok((dynamics::double_integrator(), Some((a, b))))
        }
        "unicycle" => Ok((dynamics::unicycle(), None)),
        "multiagent" => {
            let agents = cfg.opt_usize("system.agents")?.unwrap_or(8);
            if agents == 0 {
                return Err(cfg.invalid("system.agents", "must be at least 1"));
            }
            let (a, b) = dynamics::multiagent_block();
            let a = dynamics::block_diag(&a, agents);
            let b = dynamics::block_diag(&b, agents);
            let sys = dynamics::multiagent(agents).map_err(lib_err)?;
            Ok((sys, Some((a, b))))
        }
        "linear" => {
            let n = cfg.usize("system.state_dim")?;
            let m = cfg.usize("system.input_dim")?;
            if n == 0 {
                return Err(cfg.invalid("system.state_dim", "must be at least 1"));
            }
            if m == 0 {
                return Err(cfg.invalid("system.input_dim", "must be at least 1"));
            }
            let a = cfg.vec_f64("system.a")?;
            if a.len() != n * n {
                return Err(cfg.invalid(
                    "system.a",
                    format!("expected {} entries (row-major {n}x{n}), got {}", n * n, a.len()),
                ));
            }
            let b = cfg.vec_f64("system.b")?;
            if b.len() != n * m {
                return Err(cfg.invalid(
                    "system.b",
                    format!("expected {} entries (row-major {n}x{m}), got {}", n * m, b.len()),
                ));
            }
            let a = DMatrix::from_row_slice(n, n, &a);
            let b = DMatrix::from_row_slice(n, m, &b);
            let sys = dynamics::linear_system(a.clone(), b.clone()).map_err(lib_err)?;
            Ok((sys, Some((a, b))))
        }
        other => Err(cfg.invalid(
            "system.kind",
            format!(
                "unknown system `{other}` (expected pendulum, double_integrator, \
                 unicycle, multiagent, or linear)"
            ),
        )),
    }
}

pub fn build_x0(cfg: &Config, n: usize) -> ConfigResult<DVector<f64>> {
    let x0 = cfg.vec_f64("initial.x0")?;
    if x0.len() != n {
        return Err(cfg.invalid(
            "initial.x0",
            format!("has {} entries, system expects {n}", x0.len()),
        ));
    }
    Ok(DVector::from_row_slice(&x0))
}

pub fn build_barrier(cfg: &Config, n: usize) -> ConfigResult<Barrier> {
    let kind = cfg.string("barrier.kind")?;
    match kind.as_str() {
        "quadratic" => {
            let c = cfg.f64("barrier.c")?;
            if c <= 0.0 {
                return Err(cfg.invalid("barrier.c", "must be positive"));
            }
            let p = match cfg.opt_string("barrier.p")? {
                None => DMatrix::identity(n, n),
                Some(s) if s == "identity" => DMatrix::identity(n, n),
                Some(_) => {
                    let entries = cfg.vec_f64("barrier.p")?;
                    if entries.len() != n * n {
                        return Err(cfg.invalid(
                            "barrier.p",
                            format!(
                                "expected {} entries (row-major {n}x{n}), got {}",
                                n * n,
                                entries.len()
                            ),
                        ));
                    }
                    DMatrix::from_row_slice(n, n, &entries)
                }
            };
            let shift = match cfg.opt_vec_f64("barrier.shift")? {
                None => DVector::zeros(n),
                Some(v) => {
                    if v.len() != n {
                        return Err(cfg.invalid(
                            "barrier.shift",
                            format!("has {} entries, expected {n}", v.len()),
                        ));
                    }
                    DVector::from_row_slice(&v)
                }
            };
            quadratic_barrier_shifted(c, p, shift).map_err(lib_err)
        }
        "position" => {
            let eps2 = cfg.f64("barrier.eps2")?;
            if eps2 <= 0.0 {
                return Err(cfg.invalid("barrier.eps2", "must be positive"));
            }
            position_barrier(eps2, n).map_err(lib_err)
        }
        other => Err(cfg.invalid(
            "barrier.kind",
            format!("unknown barrier `{other}` (expected quadratic or position)"),
        )),
    }
}

/// Optional `[avoid]` obstacle.
pub fn build_obstacle(cfg: &Config, n: usize) -> ConfigResult<Option<Barrier>> {
    if !cfg.has_section("avoid") {
        return Ok(None);
    }
    let center = cfg.vec_f64("avoid.center")?;
    if center.len() != 2 {
        return Err(cfg.invalid("avoid.center", "expected exactly two entries"));
    }
    let radius = cfg.f64("avoid.radius")?;
    if radius <= 0.0 {
        return Err(cfg.invalid("avoid.radius", "must be positive"));
    }
    obstacle_barrier([center[0], center[1]], radius, n)
        .map(Some)
        .map_err(lib_err)
}

/// Schedule from `[schedule]`; `r0` defaults to Eq. (3) applied to `x0`.
pub fn build_schedule(
    cfg: &Config,
    barrier: &Barrier,
    x0: Option<&DVector<f64>>,
) -> ConfigResult<ConstrictionSchedule> {
    let deadline = cfg.f64("schedule.deadline")?;
    if deadline <= 0.0 {
        return Err(cfg.invalid("schedule.deadline", "must be positive"));
    }
    let family = cfg.string("schedule.family")?;
    let kind = match family.as_str() {
        "linear" => ScheduleKind::Linear,
        "exponential" => {
            let lambda = cfg.f64("schedule.lambda")?;
            if lambda <= 0.0 {
                return Err(cfg.invalid("schedule.lambda", "must be positive"));
            }
            ScheduleKind::Exponential { lambda }
        }
        "polynomial" => {
            let power = cfg.f64("schedule.power")?;
            if power < 1.0 {
                return Err(cfg.invalid("schedule.power", "must be at least 1"));
            }
            ScheduleKind::Polynomial { power }
        }
        "offset_quadratic" => {
            let delta = cfg.f64("schedule.delta")?;
            if delta <= 0.0 {
                return Err(cfg.invalid("schedule.delta", "must be positive"));
            }
            ScheduleKind::OffsetQuadratic { delta }
        }
        other => {
            return Err(cfg.invalid(
                "schedule.family",
                format!(
                    "unknown family `{other}` (expected linear, exponential, \
                     polynomial, or offset_quadratic)"
                ),
            ))
        }
    };
    let r0 = match cfg.opt_f64("schedule.r0")? {
        Some(r0) => {
            if r0 < 0.0 {
                return Err(cfg.invalid("schedule.r0", "must be nonnegative"));
            }
            r0
        }
        None => {
            let x0 = x0.ok_or_else(|| {
                ConfigError::general(
                    "missing required field `schedule.r0` (no `initial.x0` to derive it from)",
                )
            })?;
            initial_relaxation(barrier, x0)
        }
    };
    ConstrictionSchedule::new(kind, r0, deadline).map_err(lib_err)
}

pub fn build_input_set(cfg: &Config, m: usize) -> ConfigResult<InputSet> {
    let kind = cfg.string("input.kind")?;
    let u_max = cfg.f64("input.u_max")?;
    if u_max <= 0.0 {
        return Err(cfg.invalid("input.u_max", "must be positive"));
    }
    match kind.as_str() {
        "box" => Ok(InputSet::Box { u_max, dim: m }),
        "ball2" => Ok(InputSet::Ball2 { u_max, dim: m }),
        other => Err(cfg.invalid(
            "input.kind",
            format!("unknown input set `{other}` (expected box or ball2)"),
        )),
    }
}

fn nominal_gains(cfg: &Config) -> ConfigResult<(f64, f64)> {
    Ok((
        cfg.f64("controller.nominal_kp")?,
        cfg.f64("controller.nominal_kd")?,
    ))
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Everything `run` produced, for artifact writing and for tests.
pub struct RunResult {
    pub trajectory: Trajectory,
    pub summary: serde_json::Value,
    pub out_dir: PathBuf,
}

pub fn out_dir(cfg: &Config, ov: &Overrides) -> ConfigResult<PathBuf> {
    if let Some(out) = &ov.out {
        return Ok(out.clone());
    }
    if let Some(dir) = cfg.opt_string("output.dir")? {
        return Ok(PathBuf::from(dir));
    }
    let name = cfg.string("scenario.name")?;
    Ok(PathBuf::from("out").join(name))
}

fn seed(cfg: &Config, ov: &Overrides) -> ConfigResult<u64> {
    Ok(ov.seed.unwrap_or(cfg.opt_u64("scenario.seed")?.unwrap_or(0)))
}

pub fn run_scenario(cfg: &Config, ov: &Overrides) -> ConfigResult<RunResult> {
    let (sys, _) = build_system(cfg)?;
    let n = sys.state_dim();
    let m = sys.input_dim();
    let x0 = build_x0(cfg, n)?;
    let barrier = build_barrier(cfg, n)?;
    let schedule = build_schedule(cfg, &barrier, Some(&x0))?;
    let obstacle = build_obstacle(cfg, n)?;
    let dt = ov.dt.unwrap_or(cfg.f64("integration.dt")?);
    if dt <= 0.0 {
        return Err(cfg.invalid("integration.dt", "must be positive"));
    }
    let t_end = cfg.f64("integration.t_end")?;
    if t_end < dt {
        return Err(cfg.invalid("integration.t_end", "must be at least dt"));
    }
    let r0 = schedule.r0();
    let deadline = schedule.deadline();
    let ctrl_kind = cfg.string("controller.kind")?;

    let trajectory = match ctrl_kind.as_str() {
        "nmpc" => {
            let obstacle = obstacle.ok_or_else(|| {
                ConfigError::general(
                    "missing required field `avoid.center` (nmpc needs an obstacle)",
                )
            })?;
            let horizon = cfg.f64("nmpc.horizon")?;
            let plan_dt = cfg.f64("nmpc.plan_dt")?;
            let beta = cfg.f64("nmpc.beta")?;
            let replan_every = cfg.usize("nmpc.replan_every")?;
            let v_max = cfg.f64("input.v_max")?;
            let omega_max = cfg.f64("input.omega_max")?;
            let mut p = NmpcProblem::new(
                sys, barrier, schedule, obstacle, horizon, plan_dt, beta, v_max, omega_max,
            )
            .map_err(lib_err)?;
            if let Some(margin) = cfg.opt_f64("nmpc.obstacle_margin")? {
                p = p
                    .with_obstacle_margin(margin)
                    .map_err(|_| cfg.invalid("nmpc.obstacle_margin", "must be nonnegative"))?;
            }
            let (traj, _diag) =
                receding_horizon_run(&p, &x0, t_end, dt, replan_every, !ov.no_warm_start)
                    .map_err(lib_err)?;
            traj
        }
        "nominal" => {
            let (kp, kd) = nominal_gains(cfg)?;
            let set = build_input_set(cfg, m)?;
            let mut ctrl = NominalController::new(set, pd_nominal(kp, kd), barrier, schedule);
            simulate(&sys, &mut ctrl, &x0, t_end, dt).map_err(lib_err)?
        }
        kind @ ("cbf_qp" | "hocbf2_qp" | "pt_clf_baseline") => {
            let set = build_input_set(cfg, m)?;
            let ck = match kind {
                "cbf_qp" => ControllerKind::CbfQp,
                "hocbf2_qp" => ControllerKind::Hocbf2Qp,
                _ => ControllerKind::PtClfBaseline,
            };
            let mut spec = ControllerSpec::new(ck, set, barrier, schedule);
            if let Some(alpha) = cfg.opt_f64("controller.alpha")? {
                spec = spec
                    .with_alpha(alpha)
                    .map_err(|_| cfg.invalid("controller.alpha", "must be positive"))?;
            }
            let g1 = cfg.opt_f64("controller.gamma1")?;
            let g2 = cfg.opt_f64("controller.gamma2")?;
            if g1.is_some() || g2.is_some() {
                spec = spec
                    .with_gammas(g1.unwrap_or(0.9), g2.unwrap_or(0.9))
                    .map_err(|_| cfg.invalid("controller.gamma1", "gains must be positive"))?;
            }
            if let Some(c_theta) = cfg.opt_f64("controller.c_theta")? {
                spec = spec
                    .with_c_theta(c_theta)
                    .map_err(|_| cfg.invalid("controller.c_theta", "must be positive"))?;
            }
            if cfg.has("controller.nominal_kp") || cfg.has("controller.nominal_kd") {
                let (kp, kd) = nominal_gains(cfg)?;
                spec = spec.with_nominal(pd_nominal(kp, kd));
            }
            if let Some(obs) = obstacle {
                spec = spec.with_aux_barrier(obs);
            }
            simulate(&sys, &mut spec, &x0, t_end, dt).map_err(lib_err)?
        }
        other => {
            return Err(cfg.invalid(
                "controller.kind",
                format!(
                    "unknown controller `{other}` (expected cbf_qp, hocbf2_qp, \
                     pt_clf_baseline, nominal, or nmpc)"
                ),
            ))
        }
    };

    let terminal = trajectory.terminal_state();
    let pos_dims = n.min(2);
    let terminal_position_norm = terminal.rows(0, pos_dims).norm();
    let summary = json!({
        "r0": r0,
        "T": deadline,
        "h_at_T": trajectory.barrier_at(deadline),
        "tube_min": trajectory.min_tube_value(),
        "peak_input_norm": trajectory.peak_input_norm(),
        "infeasible_steps": trajectory.infeasible_steps.len(),
        "terminal_position_norm": terminal_position_norm,
    });

    let dir = out_dir(cfg, ov)?;
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let csv_path = dir.join("trajectory.csv");
    std::fs::write(&csv_path, trajectory_csv(&trajectory))
        .map_err(|e| io_err(&csv_path, e))?;
    let json_path = dir.join("summary.json");
    let mut body = serde_json::to_string_pretty(&summary).expect("summary serializes");
    body.push('\n');
    std::fs::write(&json_path, body).map_err(|e| io_err(&json_path, e))?;
    if cfg.has_section("authority_map") {
        let map = authority_map_csv(cfg)?;
        let map_path = dir.join("authority_map.csv");
        std::fs::write(&map_path, map).map_err(|e| io_err(&map_path, e))?;
    }

    Ok(RunResult {
        trajectory,
        summary,
        out_dir: dir,
    })
}

fn status_str(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "optimal",
        QpStatus::Infeasible => "infeasible",
        QpStatus::MaxIterations => "max_iterations",
    }
}

/// Serializes a trajectory with the shared CSV schema
/// `t,x0..x{n-1},u0..u{m-1},h,tube,status[,h_obs...]`, full-precision
/// (shortest round-trip) decimal.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.states[0].len();
    let m = traj.inputs[0].len();
    let mut out = String::new();
    out.push('t');
    for i in 0..n {
        out.push_str(&format!(",x{i}"));
    }
    for i in 0..m {
        out.push_str(&format!(",u{i}"));
    }
    out.push_str(",h,tube,status");
    for _ in 0..traj.aux_barriers.len() {
        out.push_str(",h_obs");
    }
    out.push('\n');
    for k in 0..traj.len() {
        out.push_str(&format!("{}", traj.times[k]));
        for v in traj.states[k].iter() {
            out.push_str(&format!(",{v}"));
        }
        for v in traj.inputs[k].iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push_str(&format!(
            ",{},{},{}",
            traj.barrier_values[k],
            traj.tube_values[k],
            status_str(traj.solver_statuses[k])
        ));
        for series in &traj.aux_barriers {
            out.push_str(&format!(",{}", series[k]));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

pub struct CertifyResult {
    pub report: String,
}

fn finite_or_string(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_infinite() && v > 0.0 {
        json!("inf")
    } else if v.is_infinite() {
        json!("-inf")
    } else {
        json!("nan")
    }
}

/// Smallest gain of `B'P^{1/2}` over unit state directions: the `mu_min` of
/// the closed-form certificate, reported alongside it.
fn mu_min_of(a_b: &(DMatrix<f64>, DMatrix<f64>), p: &DMatrix<f64>) -> f64 {
    let eig = p.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let p_half =
        &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose();
    let b = &a_b.1;
    let gain = &p_half * b * b.transpose() * &p_half;
    gain.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
        .sqrt()
}

pub fn certify(cfg: &Config, ov: &Overrides) -> ConfigResult<CertifyResult> {
    let (sys, linear) = build_system(cfg)?;
    let n = sys.state_dim();
    let m = sys.input_dim();
    let barrier = build_barrier(cfg, n)?;
    let x0 = if cfg.has("initial.x0") {
        Some(build_x0(cfg, n)?)
    } else {
        None
    };
    let schedule = build_schedule(cfg, &barrier, x0.as_ref())?;
    let set = build_input_set(cfg, m)?;
    let seed = seed(cfg, ov)?;

    let opts = SampleOptions {
        time_grid: cfg.opt_usize("certificate.time_grid")?.unwrap_or(64),
        boundary_samples: cfg.opt_usize("certificate.samples")?.unwrap_or(128),
        refine_steps: cfg.opt_usize("certificate.refine_steps")?.unwrap_or(25),
        seed,
        domain_center: x0.clone(),
        domain_radius: cfg.opt_f64("certificate.domain_radius")?.unwrap_or(5.0),
    };

    // closed form applies to linear dynamics with an origin-centered strictly
    // convex quadratic barrier; anything else certifies by sampling
    let closed: Option<(FeasibilityCertificate, f64)> = match (&linear, barrier.quadratic_form())
    {
        (Some((a, b)), Some(form)) if form.shift.norm() == 0.0 => {
            sigma_min_linear_closed_form(a, b, &form.p, form.c, set.u_max(), schedule.r0())
                .ok()
                .map(|c| (c, mu_min_of(&(a.clone(), b.clone()), &form.p)))
        }
        _ => None,
    };
    let sampled = sigma_min_sampled(&barrier, &sys, &set, &schedule, &opts).map_err(lib_err)?;

    let mut flags: Vec<String> = Vec::new();
    let primary = if let Some((cf, mu)) = &closed {
        let denom = sampled.sigma_min.abs().max(cf.sigma_min.abs()).max(1e-12);
        if (sampled.sigma_min - cf.sigma_min).abs() / denom > 0.01 {
            flags.push(format!(
                "closed-form sigma_min {} and sampled sigma_min {} differ by more than 1%; \
                 the closed form is a conservative worst-direction bound",
                cf.sigma_min, sampled.sigma_min
            ));
        }
        if *mu == 0.0 {
            flags.push(
                "mu_min = 0: the input gain map has a kernel, so the closed form \
                 cannot certify recovery for any deadline"
                    .to_string(),
            );
        }
        cf
    } else {
        &sampled
    };

    let deadline = schedule.deadline();
    let t_min_value = t_min(schedule.r0(), primary.sigma_min);
    let feasible = deadline >= t_min_value;
    let method = match closed {
        Some(_) => "closed_form_linear",
        None => "sampled",
    };
    let json = json!({
        "scenario": cfg.opt_string("scenario.name")?.unwrap_or_default(),
        "r0": schedule.r0(),
        "deadline": deadline,
        "sigma_min": finite_or_string(primary.sigma_min),
        "t_min": finite_or_string(t_min_value),
        "method": method,
        "worst_point": primary.worst_state,
        "mu_min": closed.as_ref().map(|(_, mu)| *mu),
        "sampled_sigma_min": finite_or_string(sampled.sigma_min),
        "sampled_t_min": finite_or_string(t_min(schedule.r0(), sampled.sigma_min)),
        "seed": seed,
        "samples": sampled.sample_count,
        "deadline_feasible": feasible,
        "discrepancy_flags": flags,
    });

    let mut report = format!(
        "sigma_min = {} ({method}), r0 = {}, T_min = {}\n",
        primary.sigma_min,
        schedule.r0(),
        t_min_value
    );
    report.push_str(&format!(
        "configured T = {deadline}: T >= T_min {}\n",
        if feasible { "holds" } else { "FAILS" }
    ));
    for f in json["discrepancy_flags"].as_array().unwrap() {
        report.push_str(&format!("note: {}\n", f.as_str().unwrap()));
    }

    let dir = out_dir(cfg, ov)?;
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let path = dir.join("certificate.json");
    let mut body = serde_json::to_string_pretty(&json).expect("certificate serializes");
    body.push('\n');
    std::fs::write(&path, body).map_err(|e| io_err(&path, e))?;

    Ok(CertifyResult { report })
}

// ---------------------------------------------------------------------------
// authority map
// ---------------------------------------------------------------------------

/// Uniform grid of the barrier authority over a 2-D state box, as
/// `x1,x2,sigma` CSV rows.
pub fn authority_map_csv(cfg: &Config) -> ConfigResult<String> {
    let (sys, _) = build_system(cfg)?;
    if sys.state_dim() != 2 {
        return Err(cfg.invalid(
            "system.kind",
            format!(
                "authority map needs a 2-D state system, `{}` has dimension {}",
                sys.label(),
                sys.state_dim()
            ),
        ));
    }
    let barrier = build_barrier(cfg, 2)?;
    let set = build_input_set(cfg, sys.input_dim())?;
    let x1_min = cfg.f64("authority_map.x1_min")?;
    let x1_max = cfg.f64("authority_map.x1_max")?;
    let x2_min = cfg.f64("authority_map.x2_min")?;
    let x2_max = cfg.f64("authority_map.x2_max")?;
    if x1_max <= x1_min {
        return Err(cfg.invalid("authority_map.x1_max", "must exceed x1_min"));
    }
    if x2_max <= x2_min {
        return Err(cfg.invalid("authority_map.x2_max", "must exceed x2_min"));
    }
    let res = cfg.opt_usize("authority_map.resolution")?.unwrap_or(201);
    if res < 2 {
        return Err(cfg.invalid("authority_map.resolution", "must be at least 2"));
    }
    let mut out = String::from("x1,x2,sigma\n");
    for j in 0..res {
        let x2 = x2_min + (x2_max - x2_min) * j as f64 / (res - 1) as f64;
        for i in 0..res {
            let x1 = x1_min + (x1_max - x1_min) * i as f64 / (res - 1) as f64;
            let x = DVector::from_row_slice(&[x1, x2]);
            let sigma = barrier_authority(&barrier, &sys, &set, &x);
            out.push_str(&format!("{x1},{x2},{sigma}\n"));
        }
    }
    Ok(out)
}

pub fn write_authority_map(cfg: &Config, ov: &Overrides) -> ConfigResult<PathBuf> {
    let csv = authority_map_csv(cfg)?;
    let dir = out_dir(cfg, ov)?;
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let path = dir.join("authority_map.csv");
    std::fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
    Ok(path)
}
