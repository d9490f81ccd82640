//! Constriction schedules `r(t)`: monotone relaxations that start at the
//! initial violation `r0` and collapse to their terminal value at the
//! deadline `T`. Past the deadline, `r` holds its terminal value with zero
//! derivatives, so the controller reverts to a static safety filter.

use serde::Serialize;

use crate::barrier::Barrier;
use crate::error::{Error, Result};
use nalgebra::DVector;

/// Schedule family, with family-specific parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum ScheduleKind {
    /// `r0 (1 - t/T)`: constant rate `r0/T`.
    Linear,
    /// `r0 (e^{lambda(1 - t/T)} - 1)/(e^lambda - 1)`: fast early contraction.
    Exponential { lambda: f64 },
    /// `r0 (1 - t/T)^p`: slow early, fast near the deadline.
    Polynomial { power: f64 },
    /// `(r0 + delta)(1 - t/T)^2 - delta`: C^2, terminates `delta` inside the
    /// target set (terminal value `-delta`).
    OffsetQuadratic { delta: f64 },
}

/// Schedule sample: value and first two time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValue {
    pub r: f64,
    pub rdot: f64,
    pub rddot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstrictionSchedule {
    kind: ScheduleKind,
    r0: f64,
    deadline: f64,
}

impl ConstrictionSchedule {
    pub fn new(kind: ScheduleKind, r0: f64, deadline: f64) -> Result<Self> {
        if r0 < 0.0 {
            return Err(Error::Config(format!("r0 must be nonnegative, got {r0}")));
        }
        if deadline <= 0.0 {
            return Err(Error::Config(format!(
                "deadline must be positive, got {deadline}"
            )));
        }
        match kind {
            ScheduleKind::Exponential { lambda } if lambda <= 0.0 => {
                return Err(Error::Config(format!(
                    "exponential schedule needs lambda > 0, got {lambda}"
                )));
            }
            ScheduleKind::Polynomial { power } if power < 1.0 => {
                return Err(Error::Config(format!(
                    "polynomial schedule needs p >= 1, got {power}"
                )));
            }
            ScheduleKind::OffsetQuadratic { delta } if delta < 0.0 => {
                return Err(Error::Config(format!(
                    "offset-quadratic schedule needs delta >= 0, got {delta}"
                )));
            }
            _ => {}
        }
        Ok(Self { kind, r0, deadline })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn deadline(&self) -> f64 {
        self.deadline
    }

    /// Value of `r` at the deadline: 0 for all families except
    /// offset-quadratic, which ends at `-delta`.
    pub fn terminal_value(&self) -> f64 {
        match self.kind {
            ScheduleKind::OffsetQuadratic { delta } => -delta,
            _ => 0.0,
        }
    }

    /// Analytic `(r, rdot, rddot)`; clamped to `(r(T), 0, 0)` for `t >= T`.
    pub fn eval(&self, t: f64) -> ScheduleValue {
        if t >= self.deadline {
            return ScheduleValue {
                r: self.terminal_value(),
                rdot: 0.0,
                rddot: 0.0,
            };
        }
        let big_t = self.deadline;
        let s = 1.0 - t / big_t;
        match self.kind {
            ScheduleKind::Linear => ScheduleValue {
                r: self.r0 * s,
                rdot: -self.r0 / big_t,
                rddot: 0.0,
            },
            ScheduleKind::Exponential { lambda } => {
                let denom = lambda.exp() - 1.0;
                let e = (lambda * s).exp();
                ScheduleValue {
                    r: self.r0 * (e - 1.0) / denom,
                    rdot: -self.r0 * lambda / big_t * e / denom,
                    rddot: self.r0 * lambda * lambda / (big_t * big_t) * e / denom,
                }
            }
            ScheduleKind::Polynomial { power } => {
                let rddot = if power > 1.0 {
                    self.r0 * power * (power - 1.0) / (big_t * big_t) * s.powf(power - 2.0)
                } else {
                    0.0
                };
                ScheduleValue {
                    r: self.r0 * s.powf(power),
                    rdot: -self.r0 * power / big_t * s.powf(power - 1.0),
                    rddot,
                }
            }
            ScheduleKind::OffsetQuadratic { delta } => {
                let a = self.r0 + delta;
                ScheduleValue {
                    r: a * s * s - delta,
                    rdot: -2.0 * a * s / big_t,
                    rddot: 2.0 * a / (big_t * big_t),
                }
            }
        }
    }
}

/// Initial relaxation `r0 = max(0, -h(x0))`.
pub fn initial_relaxation(b: &Barrier, x0: &DVector<f64>) -> f64 {
    (-b.value(x0)).max(0.0)
}

/// Constricting barrier value `h(x) + r(t)`; the state is inside the tube iff
/// the result is nonnegative.
pub fn tube_value(b: &Barrier, s: &ConstrictionSchedule, x: &DVector<f64>, t: f64) -> f64 {
    b.value(x) + s.eval(t).r
}

/// Grid check of the three schedule axioms (initial containment, target-set
/// recovery, monotone constriction). Failures are reported, not thrown.
#[derive(Debug, Clone, Serialize)]
pub struct Definition1Report {
    pub containment_ok: bool,
    pub recovery_ok: bool,
    pub monotone_ok: bool,
    pub max_positive_rdot: f64,
}

impl Definition1Report {
    pub fn all_ok(&self) -> bool {
        self.containment_ok && self.recovery_ok && self.monotone_ok
    }
}

pub fn verify_definition1(s: &ConstrictionSchedule, grid_points: usize) -> Result<Definition1Report> {
    verify_definition1_fn(
        s.r0(),
        s.deadline(),
        s.terminal_value(),
        |t| s.eval(t),
        grid_points,
    )
}

/// Generic form of [`verify_definition1`], usable on hand-built schedules in
/// tests. Recovery is checked against `terminal_value`, which families that
/// constrict past zero declare as negative.
pub fn verify_definition1_fn(
    r0: f64,
    deadline: f64,
    terminal_value: f64,
    eval: impl Fn(f64) -> ScheduleValue,
    grid_points: usize,
) -> Result<Definition1Report> {
    if grid_points < 2 {
        return Err(Error::Contract("grid needs at least two points".into()));
    }
    let tol = 1e-9 * (1.0 + r0.abs());
    let containment_ok = (eval(0.0).r - r0).abs() <= tol;
    let recovery_ok = (eval(deadline).r - terminal_value).abs() <= tol;
    let mut monotone_ok = true;
    let mut max_positive_rdot = 0.0f64;
    let mut prev_r = eval(0.0).r;
    for k in 0..grid_points {
        let t = deadline * k as f64 / (grid_points - 1) as f64;
        let v = eval(t);
        if v.rdot > max_positive_rdot {
            max_positive_rdot = v.rdot;
        }
        if v.rdot > tol || v.r > prev_r + tol {
            monotone_ok = false;
        }
        prev_r = v.r;
    }
    Ok(Definition1Report {
        containment_ok,
        recovery_ok,
        monotone_ok,
        max_positive_rdot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::quadratic_barrier;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    #[test]
    fn linear_rate_is_constant() {
        let s = ConstrictionSchedule::new(ScheduleKind::Linear, 50.66, 6.4).unwrap();
        for k in 0..100 {
            let t = 6.4 * k as f64 / 100.0;
            assert_abs_diff_eq!(s.eval(t).rdot, -50.66 / 6.4, epsilon = 1e-12);
        }
        assert!((s.eval(0.0).rdot + 7.916).abs() < 1e-3);
        // clamp at the deadline
        let v = s.eval(6.4);
        assert_eq!((v.r, v.rdot, v.rddot), (0.0, 0.0, 0.0));
    }

    #[test]
    fn offset_quadratic_terminal_and_derivatives() {
        let s = ConstrictionSchedule::new(
            ScheduleKind::OffsetQuadratic { delta: 0.125 },
            12.75,
            25.0,
        )
        .unwrap();
        assert_abs_diff_eq!(s.eval(0.0).r, 12.75, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eval(25.0).r, -0.125, epsilon = 1e-12);
        let v = s.eval(0.0);
        assert_abs_diff_eq!(v.rdot, -2.0 * 12.875 / 25.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.rddot, 2.0 * 12.875 / 625.0, epsilon = 1e-12);
        assert!((v.rdot + 1.03).abs() < 1e-12);
        assert!((v.rddot - 0.0412).abs() < 1e-12);
    }

    #[test]
    fn polynomial_midpoint() {
        let s =
            ConstrictionSchedule::new(ScheduleKind::Polynomial { power: 2.0 }, 24.75, 20.0)
                .unwrap();
        assert_abs_diff_eq!(s.eval(10.0).r, 6.1875, epsilon = 1e-12);
    }

    #[test]
    fn exponential_initial_rate() {
        let s = ConstrictionSchedule::new(ScheduleKind::Exponential { lambda: 2.0 }, 1.0, 1.0)
            .unwrap();
        let v = s.eval(0.0);
        assert_abs_diff_eq!(v.r, 1.0, epsilon = 1e-12);
        let e2 = 2.0f64.exp();
        assert_abs_diff_eq!(v.rdot, -2.0 * e2 / (e2 - 1.0), epsilon = 1e-12);
        assert!((v.rdot + 2.313).abs() < 1e-3);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(ConstrictionSchedule::new(ScheduleKind::Linear, -1.0, 1.0).is_err());
        assert!(ConstrictionSchedule::new(ScheduleKind::Linear, 1.0, 0.0).is_err());
        assert!(
            ConstrictionSchedule::new(ScheduleKind::Exponential { lambda: 0.0 }, 1.0, 1.0)
                .is_err()
        );
        assert!(
            ConstrictionSchedule::new(ScheduleKind::Polynomial { power: 0.5 }, 1.0, 1.0).is_err()
        );
        assert!(
            ConstrictionSchedule::new(ScheduleKind::OffsetQuadratic { delta: -0.1 }, 1.0, 1.0)
                .is_err()
        );
    }

    #[test]
    fn initial_relaxation_examples() {
        let b = quadratic_barrier(1.0, DMatrix::identity(1, 1)).unwrap();
        // x0 = 2: h = 1 - 4 = -3
        assert_abs_diff_eq!(
            initial_relaxation(&b, &DVector::from_row_slice(&[2.0])),
            3.0,
            epsilon = 1e-12
        );
        // inside the target set: zero
        assert_eq!(
            initial_relaxation(&b, &DVector::from_row_slice(&[0.5])),
            0.0
        );
    }

    #[test]
    fn tube_values() {
        let b = quadratic_barrier(1.0, DMatrix::identity(1, 1)).unwrap();
        let x0 = DVector::from_row_slice(&[2.0]);
        let r0 = initial_relaxation(&b, &x0);
        let s = ConstrictionSchedule::new(ScheduleKind::Linear, r0, 2.0).unwrap();
        // initial state sits on the tube boundary
        assert_abs_diff_eq!(tube_value(&b, &s, &x0, 0.0), 0.0, epsilon = 1e-12);
        // after the deadline the tube is the target set itself
        let x = DVector::from_row_slice(&[0.7]);
        assert_abs_diff_eq!(tube_value(&b, &s, &x, 5.0), b.value(&x), epsilon = 1e-15);
    }

    #[test]
    fn definition1_reports() {
        let lin = ConstrictionSchedule::new(ScheduleKind::Linear, 3.0, 2.0).unwrap();
        assert!(verify_definition1(&lin, 101).unwrap().all_ok());

        let exp = ConstrictionSchedule::new(ScheduleKind::Exponential { lambda: 5.0 }, 3.0, 2.0)
            .unwrap();
        let rep = verify_definition1(&exp, 101).unwrap();
        assert!(rep.all_ok());
        assert_eq!(rep.max_positive_rdot, 0.0);

        // hand-built increasing schedule as a negative control
        let rep = verify_definition1_fn(
            0.0,
            1.0,
            1.0,
            |t| ScheduleValue {
                r: t,
                rdot: 1.0,
                rddot: 0.0,
            },
            51,
        )
        .unwrap();
        assert!(!rep.monotone_ok);
        assert_abs_diff_eq!(rep.max_positive_rdot, 1.0, epsilon = 1e-12);
    }

    fn arb_kind() -> impl Strategy<Value = ScheduleKind> {
        prop_oneof![
            Just(ScheduleKind::Linear),
            (0.1f64..5.0).prop_map(|lambda| ScheduleKind::Exponential { lambda }),
            (1.0f64..4.0).prop_map(|power| ScheduleKind::Polynomial { power }),
            (0.0f64..1.0).prop_map(|delta| ScheduleKind::OffsetQuadratic { delta }),
        ]
    }

    proptest! {
        #[test]
        fn derivatives_match_finite_differences(
            kind in arb_kind(),
            r0 in 0.1f64..100.0,
            deadline in 0.5f64..30.0,
        ) {
            let s = ConstrictionSchedule::new(kind, r0, deadline).unwrap();
            let h = 1e-4 * deadline;
            let scale = 1.0 + r0;
            for k in 1..50 {
                // stay away from the clamp kink at t = T
                let t = deadline * k as f64 / 51.0;
                let v = s.eval(t);
                let fd_r = (s.eval(t + h).r - s.eval(t - h).r) / (2.0 * h);
                let fd_rdot = (s.eval(t + h).rdot - s.eval(t - h).rdot) / (2.0 * h);
                prop_assert!((fd_r - v.rdot).abs() <= 1e-3 * scale);
                prop_assert!((fd_rdot - v.rddot).abs() <= 1e-3 * scale);
            }
        }

        #[test]
        fn schedules_are_monotone(
            kind in arb_kind(),
            r0 in 0.0f64..100.0,
            deadline in 0.5f64..30.0,
        ) {
            let s = ConstrictionSchedule::new(kind, r0, deadline).unwrap();
            let mut prev = f64::INFINITY;
            for k in 0..=200 {
                let t = deadline * k as f64 / 200.0;
                let r = s.eval(t).r;
                prop_assert!(r <= prev + 1e-12 * (1.0 + r0));
                prev = r;
            }
            // r(0) = r0 for every family
            prop_assert!((s.eval(0.0).r - r0).abs() <= 1e-9 * (1.0 + r0));
        }
    }
}
