//! One-step safety filter.
//!
//! At each control step the filter solves
//!
//! ```text
//! minimize   |u - u_hat|^2_R1 + |u - u_prev|^2_R2
//! subject to u in U
//!            H_r'(x, u) <= alpha (-H_r(x))           (affine in u)
//!            h_{v_i}(v_i + dt v_i'(x, u)) <= 0, i < c  (an interval on u_i)
//! ```
//!
//! The velocity constraints are univariate, so they shrink the input box
//! channel by channel and the remaining problem is a box QP with a single
//! affine row, solved exactly by [`crate::qp`]. Inside the ultimate set the
//! evading maneuver `u*` is always an admissible answer; it is returned when
//! the solve fails there.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::evading::{self, EvadingConfig};
use crate::model::{self, check_len, ConstraintSet, SystemModel};
use crate::qp::{BoxAffineQp, QpError};
use crate::zcbf::{Zcbf, ZcbfConfig, ZcbfEvaluation};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Tracking weight, positive definite.
    pub r1: Matrix,
    /// Input-rate weight, positive semidefinite.
    pub r2: Matrix,
    /// Linear class-K gain: `alpha(s) = alpha_gain * s`.
    pub alpha_gain: f64,
    /// Step of the Euler prediction used by the velocity constraints.
    pub dt: f64,
    /// Primal/dual tolerance of the QP.
    pub feasibility_tol: f64,
    /// Band around zero treated as the boundary of the ultimate set.
    pub membership_tol: f64,
    /// Fraction of each velocity box half-width enforced at the next step.
    pub rd1_shrink: f64,
    /// When false every solve is treated as failed (exercises the fallback).
    pub solver_enabled: bool,
}

impl FilterConfig {
    /// `R1 = I`, `R2 = 0.1 I`, `alpha_gain = 1`, `dt = 0.05`.
    pub fn with_defaults(m: usize) -> Self {
        Self {
            r1: Matrix::identity(m, m),
            r2: Matrix::identity(m, m) * 0.1,
            alpha_gain: 1.0,
            dt: 0.05,
            feasibility_tol: 1e-9,
            membership_tol: 1e-6,
            rd1_shrink: 0.98,
            solver_enabled: true,
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        for (name, w) in [("r1", &self.r1), ("r2", &self.r2)] {
            if w.nrows() != m || w.ncols() != m {
                return Err(Error::config(format!("filter.{name}"), format!("must be {m}x{m}")));
            }
            if (w - w.transpose()).amax() > 1e-12 * (1.0 + w.amax()) {
                return Err(Error::config(format!("filter.{name}"), "must be symmetric"));
            }
        }
        if self.r1.clone().cholesky().is_none() {
            return Err(Error::config("filter.r1", "must be positive definite"));
        }
        if m > 0 && self.r2.clone().symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::config("filter.r2", "must be positive semidefinite"));
        }
        if !(self.alpha_gain > 0.0) {
            return Err(Error::config("filter.alpha", "must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("filter.dt", "must be positive"));
        }
        if !(self.rd1_shrink > 0.0 && self.rd1_shrink <= 1.0) {
            return Err(Error::config("filter.rd1_shrink", "must lie in (0, 1]"));
        }
        if !(self.feasibility_tol > 0.0 && self.membership_tol >= 0.0) {
            return Err(Error::config("filter tolerances", "must be positive"));
        }
        Ok(())
    }
}

/// Forward-Euler prediction `x + dt (f(x) + g(x) u)`.
pub fn discrete_step(model: &dyn SystemModel, x: &Vector, u: &Vector, dt: f64) -> Result<Vector> {
    Ok(x + model::eval_dynamics(model, x, u)? * dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Inside,
    Boundary,
    Outside,
}

impl Membership {
    /// Inside or on the boundary: the fallback is guaranteed admissible.
    pub fn in_set(self) -> bool {
        !matches!(self, Membership::Outside)
    }
}

#[derive(Debug, Clone)]
pub struct MembershipReport {
    pub status: Membership,
    /// `H_r(x)`.
    pub zcbf: f64,
    /// `h_{v_i}(v)` for the boxed channels.
    pub rd1: Vec<f64>,
    pub evaluation: ZcbfEvaluation,
}

impl MembershipReport {
    pub fn max_margin(&self) -> f64 {
        self.rd1.iter().copied().fold(self.zcbf, f64::max)
    }

    /// The zero-level sets `x` currently sits on.
    pub fn on_boundary(&self, tol: f64) -> (bool, Vec<bool>) {
        (self.zcbf.abs() <= tol, self.rd1.iter().map(|h| h.abs() <= tol).collect())
    }
}

fn classify(margins: impl Iterator<Item = f64>, tol: f64) -> Membership {
    let max = margins.fold(f64::NEG_INFINITY, f64::max);
    if max < -tol {
        Membership::Inside
    } else if max <= tol {
        Membership::Boundary
    } else {
        Membership::Outside
    }
}

/// Which constraints hold with equality at the returned input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActiveSet {
    pub zcbf: bool,
    pub rd1: Vec<bool>,
    pub input_lower: Vec<bool>,
    pub input_upper: Vec<bool>,
}

impl ActiveSet {
    /// Bit 0: barrier; bits `1..=c`: velocity boxes; then `m` lower-bound
    /// bits followed by `m` upper-bound bits.
    pub fn bits(&self) -> u64 {
        let mut bits = self.zcbf as u64;
        let mut shift = 1;
        for flag in self.rd1.iter().chain(&self.input_lower).chain(&self.input_upper) {
            bits |= (*flag as u64) << shift;
            shift += 1;
        }
        bits
    }
}

#[derive(Debug, Clone)]
pub struct FilterResult {
    pub u_safe: Vector,
    /// The solve failed inside the ultimate set and `u*` was returned.
    pub used_fallback: bool,
    /// `x` was outside the ultimate set: constraint violation was minimized
    /// before the objective.
    pub best_effort: bool,
    pub membership: Membership,
    pub zcbf: f64,
    pub t_star: f64,
    pub rd1: Vec<f64>,
    pub zcbf_margin: f64,
    pub active: ActiveSet,
    pub objective: f64,
    pub solve_time: Duration,
    pub switching: bool,
    pub truncated: bool,
}

/// The filter bound to one system, constraint set and evading maneuver.
#[derive(Clone)]
pub struct SafetyFilter {
    model: Arc<dyn SystemModel>,
    constraints: ConstraintSet,
    evading: EvadingConfig,
    zcbf: ZcbfConfig,
    config: FilterConfig,
}

struct Problem {
    qp: BoxAffineQp,
    /// Velocity-box interval per boxed channel (before clamping to `U`).
    rd1_interval: Vec<(f64, f64)>,
    /// Channels whose velocity interval misses `U` entirely.
    rd1_empty: Vec<bool>,
}

impl SafetyFilter {
    pub fn new(
        model: Arc<dyn SystemModel>,
        constraints: ConstraintSet,
        evading: EvadingConfig,
        zcbf: ZcbfConfig,
        config: FilterConfig,
    ) -> Result<Self> {
        let m = model.rd1_dim();
        if constraints.input().len() != m {
            return Err(Error::DimensionMismatch {
                what: "input bounds",
                expected: m,
                got: constraints.input().len(),
            });
        }
        evading.validate(m, constraints.boxed_count())?;
        zcbf.validate()?;
        config.validate(m)?;
        Ok(Self {
            model,
            constraints,
            evading,
            zcbf,
            config,
        })
    }

    /// Position-only baseline: every channel uses the free evading law, no
    /// velocity boxes and no input-rate term.
    pub fn baseline(
        model: Arc<dyn SystemModel>,
        constraints: &ConstraintSet,
        evading: &EvadingConfig,
        zcbf: ZcbfConfig,
        config: FilterConfig,
    ) -> Result<Self> {
        let m = model.rd1_dim();
        let config = FilterConfig {
            r2: Matrix::zeros(m, m),
            ..config
        };
        Self::new(model, constraints.without_rd1(), evading.unconstrained(), zcbf, config)
    }

    pub fn model(&self) -> &dyn SystemModel {
        self.model.as_ref()
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn evading(&self) -> &EvadingConfig {
        &self.evading
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn zcbf_config(&self) -> &ZcbfConfig {
        &self.zcbf
    }

    pub fn zcbf(&self) -> Zcbf<'_> {
        Zcbf::new(self.model.as_ref(), &self.constraints, &self.evading, &self.zcbf)
    }

    pub fn evading_input(&self, x: &Vector) -> Result<Vector> {
        evading::evading_input(self.model.as_ref(), &self.constraints, &self.evading, x)
    }

    fn rd1_values(&self, x: &Vector) -> Vec<f64> {
        let n = self.model.rd2_dim();
        let v = x.rows(n, x.len() - n).into_owned();
        (0..self.constraints.boxed_count())
            .map(|i| self.constraints.rd1_value(&v, i).expect("boxed channel"))
            .collect()
    }

    fn report(&self, x: &Vector, evaluation: ZcbfEvaluation) -> MembershipReport {
        let rd1 = self.rd1_values(x);
        let status = classify(
            std::iter::once(evaluation.value).chain(rd1.iter().copied()),
            self.config.membership_tol,
        );
        MembershipReport {
            status,
            zcbf: evaluation.value,
            rd1,
            evaluation,
        }
    }

    /// Classifies `x` against the ultimate set `{H_r <= 0} ∩ boxes`.
    pub fn membership(&self, x: &Vector) -> Result<MembershipReport> {
        let evaluation = self.zcbf().evaluate(x)?;
        Ok(self.report(x, evaluation))
    }

    fn build_problem(
        &self,
        x: &Vector,
        u_hat: &Vector,
        u_prev: &Vector,
        eval: &ZcbfEvaluation,
    ) -> Result<Problem> {
        let model = self.model.as_ref();
        let n = model.rd2_dim();
        let m = model.rd1_dim();
        let cfg = &self.config;
        let input = self.constraints.input();

        let q = (&cfg.r1 + &cfg.r2) * 2.0;
        let c = (&cfg.r1 * u_hat + &cfg.r2 * u_prev) * 2.0;

        let g = model::checked_g(model, x)?;
        let fv = model.f_v(x)?;
        let mut lower = input.lower().clone();
        let mut upper = input.upper().clone();
        let rd1 = self.constraints.rd1();
        let mut rd1_interval = Vec::with_capacity(rd1.len());
        let mut rd1_empty = Vec::with_capacity(rd1.len());
        for i in 0..rd1.len() {
            let half = cfg.rd1_shrink * rd1.half_width(i);
            let (v_lo, v_hi) = (rd1.center(i) - half, rd1.center(i) + half);
            let vi = x[n + i];
            // v_i + dt (f_i + g_i u_i) in [v_lo, v_hi]
            let to_u = |target: f64| ((target - vi) / cfg.dt - fv[i]) / g[i];
            let (a, b) = (to_u(v_lo), to_u(v_hi));
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            rd1_interval.push((lo, hi));
            let (l, u) = (lower[i].max(lo), upper[i].min(hi));
            if l <= u {
                lower[i] = l;
                upper[i] = u;
                rd1_empty.push(false);
            } else {
                // Closest admissible point to the interval.
                let p = if hi < lower[i] { lower[i] } else { upper[i] };
                lower[i] = p;
                upper[i] = p;
                rd1_empty.push(true);
            }
        }

        let (a, b0) = eval.affine_rate(model, x)?;
        let rhs = cfg.alpha_gain * -eval.value - b0;
        debug_assert_eq!(a.len(), m);
        Ok(Problem {
            qp: BoxAffineQp {
                q,
                c,
                lower,
                upper,
                affine: Some((a, rhs)),
                tol: cfg.feasibility_tol,
            },
            rd1_interval,
            rd1_empty,
        })
    }

    fn objective(&self, u: &Vector, u_hat: &Vector, u_prev: &Vector) -> f64 {
        let e1 = u - u_hat;
        let e2 = u - u_prev;
        e1.dot(&(&self.config.r1 * &e1)) + e2.dot(&(&self.config.r2 * &e2))
    }

    fn active_set(&self, u: &Vector, problem: &Problem, margin: f64) -> ActiveSet {
        let input = self.constraints.input();
        let tol = |v: f64| 1e-7 * (1.0 + v.abs());
        let (a, b) = problem.qp.affine.as_ref().expect("affine row");
        let scale = 1.0 + b.abs() + a.amax() * u.amax();
        ActiveSet {
            zcbf: margin.abs() <= 1e-7 * scale,
            rd1: problem
                .rd1_interval
                .iter()
                .enumerate()
                .map(|(i, (lo, hi))| (u[i] - lo).abs() <= tol(*lo) || (u[i] - hi).abs() <= tol(*hi))
                .collect(),
            input_lower: (0..u.len()).map(|i| (u[i] - input.lower()[i]).abs() <= tol(input.lower()[i])).collect(),
            input_upper: (0..u.len()).map(|i| (u[i] - input.upper()[i]).abs() <= tol(input.upper()[i])).collect(),
        }
    }

    /// Filters `u_hat` at state `x`; `u_prev` is the previously applied input.
    pub fn solve(&self, x: &Vector, u_hat: &Vector, u_prev: &Vector) -> Result<FilterResult> {
        let start = Instant::now();
        let model = self.model.as_ref();
        let m = model.rd1_dim();
        check_len("state", x, model.state_dim())?;
        check_len("nominal input", u_hat, m)?;
        check_len("previous input", u_prev, m)?;
        let input = self.constraints.input();
        let tol = self.config.feasibility_tol;
        if !input.contains(u_hat, tol * (1.0 + u_hat.amax())) {
            return Err(Error::InputOutOfBounds { what: "nominal input" });
        }
        if !input.contains(u_prev, tol * (1.0 + u_prev.amax())) {
            return Err(Error::InputOutOfBounds { what: "previous input" });
        }

        let eval = self.zcbf().evaluate_with_gradient(x)?;
        let mut problem = self.build_problem(x, u_hat, u_prev, &eval)?;
        let report = self.report(x, eval);
        let membership = report.status;
        let eval = &report.evaluation;

        let mut used_fallback = false;
        let mut best_effort = false;
        let solved = if !self.config.solver_enabled {
            Err(QpError::NoKktPoint)
        } else if problem.rd1_empty.iter().any(|e| *e) {
            Err(QpError::Infeasible)
        } else {
            problem.qp.solve()
        };

        let u_safe = match solved {
            Ok(sol) => sol.u,
            Err(_) if membership.in_set() => {
                used_fallback = true;
                self.evading_input(x)?
            }
            Err(_) => {
                best_effort = true;
                self.best_effort(&mut problem).map_or_else(|| self.evading_input(x), Ok)?
            }
        };
        // Solutions sit on the box up to round-off; keep them exactly inside.
        let u_safe = input.clamp(&u_safe);

        let margin = crate::zcbf::zcbf_margin(model, eval, x, &u_safe, self.config.alpha_gain)?;
        let active = self.active_set(&u_safe, &problem, margin);
        let objective = self.objective(&u_safe, u_hat, u_prev);
        Ok(FilterResult {
            u_safe,
            used_fallback,
            best_effort,
            membership,
            zcbf: report.zcbf,
            t_star: eval.t_star,
            rd1: report.rd1.clone(),
            zcbf_margin: margin,
            active,
            objective,
            solve_time: start.elapsed(),
            switching: eval.switching,
            truncated: eval.truncated,
        })
    }

    /// Lexicographic fallback outside the ultimate set: velocity channels
    /// already sit at their least-violating input (see `build_problem`);
    /// the barrier row is relaxed by the smallest slack that makes it
    /// feasible over the remaining box, then the objective is minimized.
    fn best_effort(&self, problem: &mut Problem) -> Option<Vector> {
        if !self.config.solver_enabled {
            return None;
        }
        let qp = &mut problem.qp;
        let (a, b) = qp.affine.clone()?;
        let floor = BoxAffineQp::min_affine_over_box(&a, &qp.lower, &qp.upper);
        let slack = (floor - b).max(0.0);
        qp.affine = Some((a, b + slack + 1e-9 * (1.0 + b.abs())));
        qp.solve().ok().map(|s| s.u)
    }
}
