//! Rollout barrier `H_r(x) = sup_{t >= 0} h_r(y(t))` where `y` follows the
//! closed loop `y' = f(y) + g(y) u*(y)` from `y(0) = x`.
//!
//! The supremum is taken over a finite horizon with an early stop once the
//! flow has been retreating for a dwell time. The gradient comes from the
//! variational equation integrated up to the maximizer `t*`:
//! `dH/dx = grad h_r(r(t*))^T Phi_r(t*)`.

use serde::{Deserialize, Serialize};

use crate::evading::{self, EvadingConfig};
use crate::integrate::{rk4_step, rk4_variational_step};
use crate::model::{self, numeric_jacobian, ConstraintSet, SystemModel};
use crate::{Error, Matrix, Result, Vector};

/// Relative tolerance on two local maxima for flagging a maximizer switch.
pub const SWITCH_REL_TOL: f64 = 1e-6;

/// `|dH/dx|` below this is reported as a degenerate gradient.
pub const DEGENERATE_GRAD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZcbfConfig {
    /// Rollout horizon `T_max`.
    pub horizon: f64,
    /// Integration step.
    pub step: f64,
    /// Retreat time after which the rollout stops early.
    pub dwell: f64,
}

impl Default for ZcbfConfig {
    fn default() -> Self {
        Self {
            horizon: 15.0,
            step: 0.01,
            dwell: 1.0,
        }
    }
}

impl ZcbfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("zcbf.horizon", "must be positive"));
        }
        if !(self.step > 0.0 && self.step <= self.horizon) {
            return Err(Error::config("zcbf.step", "must be positive and at most the horizon"));
        }
        if !(self.dwell >= 0.0) {
            return Err(Error::config("zcbf.dwell", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Sampled closed-loop flow under the evading maneuver.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// `h_r` along the flow.
    pub h: Vec<f64>,
    /// `h_r'` along the flow.
    pub h_dot: Vec<f64>,
    pub stopped_early: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Result of evaluating the rollout barrier at one state.
#[derive(Debug, Clone)]
pub struct ZcbfEvaluation {
    /// `H_r(x)`.
    pub value: f64,
    /// Earliest maximizer.
    pub t_star: f64,
    /// `dH_r/dx`, present when requested.
    pub gradient: Option<Vector>,
    pub trajectory: Trajectory,
    /// The maximum sits at the horizon without an early stop: `value` is then
    /// only a lower bound on the supremum.
    pub truncated: bool,
    /// Another local maximum ties with the global one, so `H_r` may not be
    /// differentiable here; the gradient belongs to the earliest maximizer.
    pub switching: bool,
    /// Grid index the maximizer was refined from, and the sub-step offset.
    bracket: Option<(usize, f64)>,
    max_index: usize,
}

impl ZcbfEvaluation {
    pub fn gradient_norm(&self) -> Option<f64> {
        self.gradient.as_ref().map(|g| g.norm())
    }

    pub fn degenerate_gradient(&self) -> bool {
        self.gradient_norm().is_some_and(|n| n < DEGENERATE_GRAD)
    }

    /// `(a, b)` with `H_r'(x, u) = a . u + b`.
    pub fn affine_rate(&self, model: &dyn SystemModel, x: &Vector) -> Result<(Vector, f64)> {
        let grad = self
            .gradient
            .as_ref()
            .ok_or_else(|| Error::config("zcbf", "gradient was not computed"))?;
        let n = model.rd2_dim();
        let m = model.rd1_dim();
        let g = model.g_diag(x)?;
        let drift = model::eval_dynamics(model, x, &Vector::zeros(m))?;
        let a = Vector::from_fn(m, |i, _| grad[n + i] * g[i]);
        Ok((a, grad.dot(&drift)))
    }
}

/// `H_r'(x, u) = dH_r/dx . (f(x) + g(x) u)`.
pub fn h_dot(model: &dyn SystemModel, eval: &ZcbfEvaluation, x: &Vector, u: &Vector) -> Result<f64> {
    let (a, b) = eval.affine_rate(model, x)?;
    model::check_len("input", u, a.len())?;
    Ok(a.dot(u) + b)
}

/// `alpha (-H_r) - H_r'`; nonnegative iff the barrier condition holds with a
/// linear `alpha(s) = alpha_gain s`.
pub fn zcbf_margin(
    model: &dyn SystemModel,
    eval: &ZcbfEvaluation,
    x: &Vector,
    u: &Vector,
    alpha_gain: f64,
) -> Result<f64> {
    Ok(alpha_gain * -eval.value - h_dot(model, eval, x, u)?)
}

/// The rollout barrier for one system, constraint set and maneuver.
#[derive(Clone, Copy)]
pub struct Zcbf<'a> {
    model: &'a dyn SystemModel,
    constraints: &'a ConstraintSet,
    evading: &'a EvadingConfig,
    config: &'a ZcbfConfig,
}

impl<'a> Zcbf<'a> {
    pub fn new(
        model: &'a dyn SystemModel,
        constraints: &'a ConstraintSet,
        evading: &'a EvadingConfig,
        config: &'a ZcbfConfig,
    ) -> Self {
        Self {
            model,
            constraints,
            evading,
            config,
        }
    }

    pub fn config(&self) -> &ZcbfConfig {
        self.config
    }

    /// `f(y) + g(y) u*(y)`.
    pub fn closed_loop(&self, y: &Vector) -> Result<Vector> {
        let u = evading::evading_input(self.model, self.constraints, self.evading, y)?;
        model::eval_dynamics(self.model, y, &u)
    }

    /// Jacobian of the closed-loop field, `d(f + g u)/dx + g du*/dx`.
    pub fn closed_loop_jacobian(&self, y: &Vector) -> Result<Matrix> {
        let n = self.model.rd2_dim();
        let m = self.model.rd1_dim();
        let u = evading::evading_input(self.model, self.constraints, self.evading, y)?;
        let g = self.model.g_diag(y)?;
        let jr = self.model.f_r_jacobian(y)?;
        let jv = self.model.f_v_jacobian(y)?;
        let jg = self.model.g_diag_jacobian(y)?;
        let du = numeric_jacobian(
            |z| evading::evading_input(self.model, self.constraints, self.evading, z),
            y,
        )?;
        let dim = n + m;
        let mut jac = Matrix::zeros(dim, dim);
        jac.rows_mut(0, n).copy_from(&jr);
        for i in 0..m {
            for j in 0..dim {
                jac[(n + i, j)] = jv[(i, j)] + u[i] * jg[(i, j)] + g[i] * du[(i, j)];
            }
        }
        Ok(jac)
    }

    fn h_and_rate(&self, y: &Vector) -> Result<(f64, f64)> {
        let n = self.model.rd2_dim();
        let r = y.rows(0, n).into_owned();
        let rd2 = self.constraints.rd2();
        let fr = self.model.f_r(y)?;
        Ok((rd2.value(&r), rd2.gradient(&r).dot(&fr)))
    }

    fn step_sizes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let cfg = self.config;
        let count = (cfg.horizon / cfg.step - 1e-9).ceil().max(1.0) as usize;
        (0..count).map(move |k| {
            let t = k as f64 * cfg.step;
            (t, cfg.step.min(cfg.horizon - t))
        })
    }

    /// Samples the evading flow from `x` over `[0, T_max]`, stopping early
    /// once `h_r` has decreased monotonically for the dwell time while
    /// `h_r' < 0`.
    pub fn rollout(&self, x: &Vector) -> Result<Trajectory> {
        model::check_len("state", x, self.model.state_dim())?;
        let wrap = |time: f64| move |e: Error| Error::Rollout {
            time,
            source: Box::new(e),
        };
        let mut traj = Trajectory::default();
        let (h0, hd0) = self.h_and_rate(x).map_err(wrap(0.0))?;
        // Check the maneuver is defined at the start too.
        self.closed_loop(x).map_err(wrap(0.0))?;
        traj.times.push(0.0);
        traj.states.push(x.clone());
        traj.h.push(h0);
        traj.h_dot.push(hd0);

        let mut retreat_since: Option<f64> = None;
        for (t, dt) in self.step_sizes() {
            let y = traj.states.last().expect("nonempty");
            let next = rk4_step(|z| self.closed_loop(z), y, dt).map_err(wrap(t))?;
            let t_next = t + dt;
            let (h, hd) = self.h_and_rate(&next).map_err(wrap(t_next))?;
            let prev_h = *traj.h.last().expect("nonempty");
            if h < prev_h {
                retreat_since.get_or_insert(t);
            } else {
                retreat_since = None;
            }
            traj.times.push(t_next);
            traj.states.push(next);
            traj.h.push(h);
            traj.h_dot.push(hd);
            if let Some(start) = retreat_since {
                if t_next - start >= self.config.dwell && hd < 0.0 {
                    traj.stopped_early = true;
                    break;
                }
            }
        }
        Ok(traj)
    }

    /// `H_r(x)` and `t*`, without the gradient.
    pub fn evaluate(&self, x: &Vector) -> Result<ZcbfEvaluation> {
        let trajectory = self.rollout(x)?;
        let h = &trajectory.h;
        let last = h.len() - 1;
        let mut best = 0;
        for k in 1..h.len() {
            if h[k] > h[best] {
                best = k;
            }
        }
        let mut value = h[best];
        let mut t_star = trajectory.times[best];
        let mut bracket = None;

        let hd = &trajectory.h_dot;
        let start = if best > 0 && hd[best] < 0.0 && hd[best - 1] >= 0.0 {
            Some(best - 1)
        } else if best < last && hd[best] > 0.0 && hd[best + 1] <= 0.0 {
            Some(best)
        } else {
            None
        };
        if let Some(a) = start {
            let dt = trajectory.times[a + 1] - trajectory.times[a];
            let y = &trajectory.states[a];
            let (tau, h_ref) = self.refine(y, dt, hd[a], hd[a + 1])?;
            if h_ref >= value {
                value = h_ref;
                t_star = trajectory.times[a] + tau;
                bracket = Some((a, tau));
            }
        }

        let truncated = !trajectory.stopped_early && best == last;
        let switching = detect_switch(h, best);
        Ok(ZcbfEvaluation {
            value,
            t_star,
            gradient: None,
            trajectory,
            truncated,
            switching,
            bracket,
            max_index: best,
        })
    }

    /// Locates the root of `h_r'` inside one integration step by
    /// regula falsi (Illinois variant) on partial RK4 steps.
    fn refine(&self, y: &Vector, dt: f64, hd_a: f64, hd_b: f64) -> Result<(f64, f64)> {
        let field = |z: &Vector| self.closed_loop(z);
        let (mut lo, mut hi) = (0.0, dt);
        let (mut f_lo, mut f_hi) = (hd_a, hd_b);
        let mut side = 0i8;
        let mut tau = 0.0;
        if f_lo == 0.0 {
            let (h, _) = self.h_and_rate(y)?;
            return Ok((0.0, h));
        }
        for _ in 0..60 {
            tau = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
            if !(tau > lo && tau < hi) {
                tau = 0.5 * (lo + hi);
            }
            let z = rk4_step(field, y, tau)?;
            let (_, f) = self.h_and_rate(&z)?;
            if f == 0.0 || (hi - lo) < 1e-13 * dt.max(1.0) {
                break;
            }
            if f > 0.0 {
                lo = tau;
                f_lo = f;
                if side == 1 {
                    f_hi *= 0.5;
                }
                side = 1;
            } else {
                hi = tau;
                f_hi = f;
                if side == -1 {
                    f_lo *= 0.5;
                }
                side = -1;
            }
        }
        let z = rk4_step(field, y, tau)?;
        let (h, _) = self.h_and_rate(&z)?;
        Ok((tau, h))
    }

    /// `H_r(x)`, `t*` and `dH_r/dx`.
    pub fn evaluate_with_gradient(&self, x: &Vector) -> Result<ZcbfEvaluation> {
        let mut eval = self.evaluate(x)?;
        let dim = self.model.state_dim();
        let n = self.model.rd2_dim();
        let field = |z: &Vector| self.closed_loop(z);
        let jac = |z: &Vector| self.closed_loop_jacobian(z);

        let (end_index, partial) = match eval.bracket {
            Some((a, tau)) => (a, Some(tau)),
            None => (eval.max_index, None),
        };
        let steps: Vec<(f64, f64)> = self.step_sizes().take(end_index).collect();
        let mut y = x.clone();
        let mut phi = Matrix::identity(dim, dim);
        for (t, dt) in steps {
            let (yn, pn) = rk4_variational_step(field, jac, &y, &phi, dt).map_err(|e| Error::Rollout {
                time: t,
                source: Box::new(e),
            })?;
            y = yn;
            phi = pn;
        }
        if let Some(tau) = partial {
            let (yn, pn) = rk4_variational_step(field, jac, &y, &phi, tau)?;
            y = yn;
            phi = pn;
        }
        let r = y.rows(0, n).into_owned();
        let grad_h = self.constraints.rd2().gradient(&r);
        let phi_r = phi.rows(0, n);
        eval.gradient = Some(phi_r.tr_mul(&grad_h));
        Ok(eval)
    }
}

/// True when some local maximum other than `best` (and not adjacent to it)
/// matches the global maximum within [`SWITCH_REL_TOL`].
fn detect_switch(h: &[f64], best: usize) -> bool {
    let top = h[best];
    let tol = SWITCH_REL_TOL * top.abs().max(1.0);
    let last = h.len() - 1;
    (0..h.len()).any(|k| {
        if k.abs_diff(best) <= 1 {
            return false;
        }
        let left = k == 0 || h[k] >= h[k - 1];
        let right = k == last || h[k] >= h[k + 1];
        left && right && top - h[k] <= tol
    })
}
