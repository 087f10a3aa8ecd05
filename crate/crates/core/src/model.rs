//! System class, constraint set and the modified-input algebra.
//!
//! States are stacked as `x = [r; v]` with `r` the `n` position-like
//! (relative degree two) coordinates and `v` the `m` velocity-like
//! (relative degree one) coordinates. The dynamics are
//!
//! ```text
//! r' = f_r(x)
//! v' = f_v(x) + diag(g_v(x)) u
//! ```
//!
//! Channels are indexed from zero in code. Velocity box constraints apply to
//! channels `0..c`.

use std::fmt;
use std::sync::Arc;

use crate::{Error, Matrix, Result, Vector};

/// `|g_{v_i}(x)|` below this is treated as a loss of control authority.
pub const SINGULARITY_TOL: f64 = 1e-9;

/// Relative step for central differences, floored at the same absolute value.
pub const FD_REL_STEP: f64 = 1e-6;

fn fd_step(xj: f64) -> f64 {
    FD_REL_STEP.max(FD_REL_STEP * xj.abs())
}

/// Central-difference Jacobian of `f` at `x`.
pub fn numeric_jacobian<F>(f: F, x: &Vector) -> Result<Matrix>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let mut xp = x.clone();
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        cols.push((fp - fm) / (2.0 * h));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    Ok(Matrix::from_fn(rows, x.len(), |i, j| cols[j][i]))
}

/// A second-order control-affine system with diagonal input map.
///
/// The Jacobian methods (all with respect to the full state `x`) default to
/// central finite differences; analytic models should override them.
pub trait SystemModel: Send + Sync {
    /// Count of position-like states `n`.
    fn rd2_dim(&self) -> usize;
    /// Count of velocity-like states and inputs `m`.
    fn rd1_dim(&self) -> usize;

    fn f_r(&self, x: &Vector) -> Result<Vector>;
    fn f_v(&self, x: &Vector) -> Result<Vector>;
    /// Diagonal entries of `g(x)`.
    fn g_diag(&self, x: &Vector) -> Result<Vector>;

    /// `n x (n+m)`.
    fn f_r_jacobian(&self, x: &Vector) -> Result<Matrix> {
        numeric_jacobian(|y| self.f_r(y), x)
    }
    /// `m x (n+m)`.
    fn f_v_jacobian(&self, x: &Vector) -> Result<Matrix> {
        numeric_jacobian(|y| self.f_v(y), x)
    }
    /// `m x (n+m)`, row `i` is the gradient of `g_{v_i}`.
    fn g_diag_jacobian(&self, x: &Vector) -> Result<Matrix> {
        numeric_jacobian(|y| self.g_diag(y), x)
    }

    fn state_dim(&self) -> usize {
        self.rd2_dim() + self.rd1_dim()
    }
}

impl<M: SystemModel + ?Sized> SystemModel for Arc<M> {
    fn rd2_dim(&self) -> usize {
        (**self).rd2_dim()
    }
    fn rd1_dim(&self) -> usize {
        (**self).rd1_dim()
    }
    fn f_r(&self, x: &Vector) -> Result<Vector> {
        (**self).f_r(x)
    }
    fn f_v(&self, x: &Vector) -> Result<Vector> {
        (**self).f_v(x)
    }
    fn g_diag(&self, x: &Vector) -> Result<Vector> {
        (**self).g_diag(x)
    }
    fn f_r_jacobian(&self, x: &Vector) -> Result<Matrix> {
        (**self).f_r_jacobian(x)
    }
    fn f_v_jacobian(&self, x: &Vector) -> Result<Matrix> {
        (**self).f_v_jacobian(x)
    }
    fn g_diag_jacobian(&self, x: &Vector) -> Result<Matrix> {
        (**self).g_diag_jacobian(x)
    }
}

/// Scalar constraint on the position-like states, safe where `h_r(r) <= 0`.
pub trait Rd2Constraint: Send + Sync {
    fn value(&self, r: &Vector) -> f64;

    fn gradient(&self, r: &Vector) -> Vector {
        let mut rp = r.clone();
        Vector::from_fn(r.len(), |j, _| {
            let h = fd_step(r[j]);
            rp[j] = r[j] + h;
            let fp = self.value(&rp);
            rp[j] = r[j] - h;
            let fm = self.value(&rp);
            rp[j] = r[j];
            (fp - fm) / (2.0 * h)
        })
    }

    fn hessian(&self, r: &Vector) -> Matrix {
        // Cannot fail: the gradient is infallible.
        numeric_jacobian(|y| Ok(self.gradient(y)), r).expect("gradient is infallible")
    }
}

/// Elementwise bounds `lower_i < upper_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vector,
    upper: Vector,
}

impl BoxBounds {
    pub fn new(lower: Vector, upper: Vector) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                what: "box upper bound",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for i in 0..lower.len() {
            if !(lower[i] < upper[i]) {
                return Err(Error::config(
                    format!("bounds[{i}]"),
                    format!("lower {} must be below upper {}", lower[i], upper[i]),
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_slices(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::new(Vector::from_column_slice(lower), Vector::from_column_slice(upper))
    }

    pub fn empty() -> Self {
        Self {
            lower: Vector::zeros(0),
            upper: Vector::zeros(0),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &Vector {
        &self.lower
    }

    pub fn upper(&self) -> &Vector {
        &self.upper
    }

    /// Half-width `(upper - lower) / 2`.
    pub fn half_width(&self, i: usize) -> f64 {
        0.5 * (self.upper[i] - self.lower[i])
    }

    /// Midpoint `(upper + lower) / 2`.
    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.upper[i] + self.lower[i])
    }

    pub fn contains(&self, u: &Vector, tol: f64) -> bool {
        u.len() == self.len()
            && (0..self.len()).all(|i| u[i] >= self.lower[i] - tol && u[i] <= self.upper[i] + tol)
    }

    pub fn clamp(&self, u: &Vector) -> Vector {
        Vector::from_fn(u.len(), |i, _| u[i].clamp(self.lower[i], self.upper[i]))
    }
}

/// Position constraint, velocity boxes on channels `0..c`, and input box.
#[derive(Clone)]
pub struct ConstraintSet {
    rd2: Arc<dyn Rd2Constraint>,
    rd1: BoxBounds,
    input: BoxBounds,
}

impl fmt::Debug for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSet")
            .field("rd1", &self.rd1)
            .field("input", &self.input)
            .finish_non_exhaustive()
    }
}

impl ConstraintSet {
    pub fn new(rd2: Arc<dyn Rd2Constraint>, rd1: BoxBounds, input: BoxBounds) -> Result<Self> {
        if rd1.len() > input.len() {
            return Err(Error::config(
                "rd1 bounds",
                format!("{} boxed channels but only {} inputs", rd1.len(), input.len()),
            ));
        }
        Ok(Self { rd2, rd1, input })
    }

    /// The same set with every velocity box dropped (`c = 0`).
    pub fn without_rd1(&self) -> Self {
        Self {
            rd2: Arc::clone(&self.rd2),
            rd1: BoxBounds::empty(),
            input: self.input.clone(),
        }
    }

    pub fn rd2(&self) -> &dyn Rd2Constraint {
        self.rd2.as_ref()
    }

    pub fn rd1(&self) -> &BoxBounds {
        &self.rd1
    }

    pub fn input(&self) -> &BoxBounds {
        &self.input
    }

    /// Count of boxed velocity channels `c`.
    pub fn boxed_count(&self) -> usize {
        self.rd1.len()
    }

    /// `h_{v_i}(v) = (v_i - v^s_i)^2 - (v^d_i)^2`, nonpositive inside the box.
    pub fn rd1_value(&self, v: &Vector, i: usize) -> Result<f64> {
        if i >= self.rd1.len() {
            return Err(Error::ChannelOutOfRange {
                index: i,
                count: self.rd1.len(),
            });
        }
        Ok(rd1_function(v[i], self.rd1.center(i), self.rd1.half_width(i)))
    }

    /// Signed distance of `v_i` to the nearest box face, negative outside.
    pub fn rd1_margin(&self, v: &Vector, i: usize) -> f64 {
        self.rd1.half_width(i) - (v[i] - self.rd1.center(i)).abs()
    }
}

pub(crate) fn rd1_function(v: f64, center: f64, half_width: f64) -> f64 {
    (v - center).powi(2) - half_width.powi(2)
}

pub(crate) fn check_len(what: &'static str, v: &Vector, expected: usize) -> Result<()> {
    if v.len() != expected {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got: v.len(),
        })
    } else {
        Ok(())
    }
}

/// Splits `x` into owned `(r, v)`.
pub fn split_state(model: &dyn SystemModel, x: &Vector) -> (Vector, Vector) {
    let n = model.rd2_dim();
    (x.rows(0, n).into_owned(), x.rows(n, x.len() - n).into_owned())
}

/// `x' = [f_r(x); f_v(x) + g(x) u]`.
pub fn eval_dynamics(model: &dyn SystemModel, x: &Vector, u: &Vector) -> Result<Vector> {
    let (n, m) = (model.rd2_dim(), model.rd1_dim());
    check_len("state", x, n + m)?;
    check_len("input", u, m)?;
    let fr = model.f_r(x)?;
    let fv = model.f_v(x)?;
    let g = model.g_diag(x)?;
    let mut dx = Vector::zeros(n + m);
    dx.rows_mut(0, n).copy_from(&fr);
    for i in 0..m {
        dx[n + i] = fv[i] + g[i] * u[i];
    }
    Ok(dx)
}

/// `g_v(x)` with every channel checked against [`SINGULARITY_TOL`].
pub fn checked_g(model: &dyn SystemModel, x: &Vector) -> Result<Vector> {
    let g = model.g_diag(x)?;
    for (i, gi) in g.iter().enumerate() {
        if !(gi.abs() >= SINGULARITY_TOL) {
            return Err(Error::SingularChannel {
                channel: i,
                value: *gi,
            });
        }
    }
    Ok(g)
}

/// Drift ratio `f_{v_i}(x) / g_{v_i}(x)` per channel.
pub fn drift_ratio(model: &dyn SystemModel, x: &Vector) -> Result<Vector> {
    check_len("state", x, model.state_dim())?;
    let g = checked_g(model, x)?;
    let fv = model.f_v(x)?;
    Ok(fv.component_div(&g))
}

/// Modified input `u~_i = f_{v_i}/g_{v_i} + u_i`, so that `v_i' = g_{v_i} u~_i`.
pub fn modified_input(model: &dyn SystemModel, x: &Vector, u: &Vector) -> Result<Vector> {
    check_len("input", u, model.rd1_dim())?;
    Ok(drift_ratio(model, x)? + u)
}

/// `(mu, nu)` from a precomputed drift ratio; `[-mu_i, nu_i]` bounds `u~_i`.
pub fn mu_nu_from_ratio(constraints: &ConstraintSet, ratio: &Vector) -> Result<(Vector, Vector)> {
    let input = constraints.input();
    check_len("input bounds", input.lower(), ratio.len())?;
    let mu = -input.lower() - ratio;
    let nu = input.upper() + ratio;
    for i in 0..ratio.len() {
        if !(mu[i] > 0.0 && nu[i] > 0.0) {
            return Err(Error::AssumptionViolation {
                channel: i,
                mu: mu[i],
                nu: nu[i],
            });
        }
    }
    Ok((mu, nu))
}

/// Admissible range of the modified input at `x`.
pub fn mu_nu(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    x: &Vector,
) -> Result<(Vector, Vector)> {
    mu_nu_from_ratio(constraints, &drift_ratio(model, x)?)
}

/// Smooth lower approximation of `min(mu, nu)`.
///
/// Requires `0 < epsilon < 4 mu nu`, which keeps the result in `(0, min(mu, nu))`.
pub fn smooth_min(mu: f64, nu: f64, epsilon: f64) -> f64 {
    0.5 * (mu + nu - ((mu - nu).powi(2) + epsilon).sqrt())
}

pub(crate) fn smooth_cap_from(mu: &Vector, nu: &Vector, epsilon: f64) -> Result<Vector> {
    if !(epsilon > 0.0) {
        return Err(Error::config("epsilon", "must be positive"));
    }
    let mut cap = Vector::zeros(mu.len());
    for i in 0..mu.len() {
        let bound = 4.0 * mu[i] * nu[i];
        // within round-off of the bound the cap is no longer reliably positive
        if !(epsilon < bound * (1.0 - 8.0 * f64::EPSILON)) {
            return Err(Error::EpsilonTooLarge {
                channel: i,
                epsilon,
                bound,
            });
        }
        cap[i] = smooth_min(mu[i], nu[i], epsilon);
    }
    Ok(cap)
}

/// `u~max_i(x)`, the magnitude the evading maneuver may use on channel `i`.
pub fn smooth_input_cap(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    x: &Vector,
    epsilon: f64,
) -> Result<Vector> {
    let (mu, nu) = mu_nu(model, constraints, x)?;
    smooth_cap_from(&mu, &nu, epsilon)
}

/// Gradient of `h_r' = grad h_r(r) . f_r(x)` with respect to the full state.
pub fn h_dot_gradient(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    x: &Vector,
) -> Result<Vector> {
    let n = model.rd2_dim();
    let r = x.rows(0, n).into_owned();
    let grad_h = constraints.rd2().gradient(&r);
    let jr = model.f_r_jacobian(x)?;
    let mut out = jr.tr_mul(&grad_h);
    let fr = model.f_r(x)?;
    let hess_term = constraints.rd2().hessian(&r) * fr;
    for j in 0..n {
        out[j] += hess_term[j];
    }
    Ok(out)
}

/// `d_i(x) = (d h_r' / d v_i) g_{v_i}(x)`, the input sensitivity of `h_r''`.
pub fn d_coeffs(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    x: &Vector,
) -> Result<Vector> {
    let g = checked_g(model, x)?;
    d_coeffs_with_g(model, constraints, x, &g)
}

pub(crate) fn d_coeffs_with_g(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    x: &Vector,
    g: &Vector,
) -> Result<Vector> {
    let (n, m) = (model.rd2_dim(), model.rd1_dim());
    check_len("state", x, n + m)?;
    let r = x.rows(0, n).into_owned();
    let grad_h = constraints.rd2().gradient(&r);
    let jr = model.f_r_jacobian(x)?;
    Ok(Vector::from_fn(m, |i, _| {
        let col = jr.column(n + i);
        grad_h.dot(&col) * g[i]
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rd2Derivatives {
    pub h: f64,
    pub h_dot: f64,
    pub h_ddot: f64,
}

/// `(h_r, h_r', h_r'')` at `(x, u)`; `h_r''` is affine in `u` with slope `d(x)`.
pub fn rd2_derivatives(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    x: &Vector,
    u: &Vector,
) -> Result<Rd2Derivatives> {
    let dx = eval_dynamics(model, x, u)?;
    let n = model.rd2_dim();
    let r = x.rows(0, n).into_owned();
    let h = constraints.rd2().value(&r);
    let h_dot = constraints.rd2().gradient(&r).dot(&dx.rows(0, n));
    let h_ddot = h_dot_gradient(model, constraints, x)?.dot(&dx);
    Ok(Rd2Derivatives { h, h_dot, h_ddot })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DoubleIntegrator, LinearRd2};
    use approx::assert_abs_diff_eq;

    fn di() -> DoubleIntegrator {
        DoubleIntegrator::new(1)
    }

    fn di_constraints(lower: f64, upper: f64) -> ConstraintSet {
        ConstraintSet::new(
            Arc::new(LinearRd2::new(vec![1.0], 1.0)),
            BoxBounds::empty(),
            BoxBounds::from_slices(&[lower], &[upper]).unwrap(),
        )
        .unwrap()
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn double_integrator_dynamics() {
        let dx = eval_dynamics(&di(), &v(&[0.0, 1.0]), &v(&[0.5])).unwrap();
        assert_eq!(dx, v(&[1.0, 0.5]));
    }

    #[test]
    fn dynamics_rejects_wrong_dims() {
        let err = eval_dynamics(&di(), &v(&[0.0, 1.0, 2.0]), &v(&[0.5])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { what: "state", .. }));
        let err = eval_dynamics(&di(), &v(&[0.0, 1.0]), &v(&[0.5, 0.1])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { what: "input", .. }));
    }

    #[test]
    fn modified_input_cases() {
        let m = crate::models::ScalarDrift::new(0.0, 1.0);
        assert_eq!(modified_input(&m, &v(&[0.0, 0.0]), &v(&[0.7])).unwrap()[0], 0.7);
        let m = crate::models::ScalarDrift::new(2.0, 2.0);
        assert_eq!(modified_input(&m, &v(&[0.0, 0.0]), &v(&[1.0])).unwrap()[0], 2.0);
        let m = crate::models::ScalarDrift::new(0.0, 0.0);
        let err = modified_input(&m, &v(&[0.0, 0.0]), &v(&[1.0])).unwrap_err();
        assert_eq!(err.channel(), Some(0));
    }

    #[test]
    fn mu_nu_cases() {
        let c = di_constraints(-1.0, 1.0);
        let m = crate::models::ScalarDrift::new(0.0, 1.0);
        let (mu, nu) = mu_nu(&m, &c, &v(&[0.0, 0.0])).unwrap();
        assert_eq!((mu[0], nu[0]), (1.0, 1.0));
        let m = crate::models::ScalarDrift::new(0.5, 1.0);
        let (mu, nu) = mu_nu(&m, &c, &v(&[0.0, 0.0])).unwrap();
        assert_eq!((mu[0], nu[0]), (0.5, 1.5));
        let c = di_constraints(0.1, 1.0);
        let m = crate::models::ScalarDrift::new(0.0, 1.0);
        let err = mu_nu(&m, &c, &v(&[0.0, 0.0])).unwrap_err();
        match err {
            Error::AssumptionViolation { channel, mu, .. } => {
                assert_eq!(channel, 0);
                assert_abs_diff_eq!(mu, -0.1, epsilon = 1e-15);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn smooth_min_cases() {
        assert_abs_diff_eq!(smooth_min(1.0, 1.0, 1e-14), 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(smooth_min(3.0, 1.0, 0.01), (4.0 - 4.01f64.sqrt()) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(smooth_min(3.0, 1.0, 0.01), 0.998751, epsilon = 1e-6);
        let err = smooth_cap_from(&v(&[0.05]), &v(&[0.05]), 0.01).unwrap_err();
        assert!(matches!(err, Error::EpsilonTooLarge { channel: 0, .. }));
    }

    #[test]
    fn d_coeffs_double_integrator() {
        let x = v(&[0.3, -2.0]);
        assert_abs_diff_eq!(d_coeffs(&di(), &di_constraints(-1.0, 1.0), &x).unwrap()[0], 1.0, epsilon = 1e-9);
        let flipped = ConstraintSet::new(
            Arc::new(LinearRd2::new(vec![-1.0], -1.0)),
            BoxBounds::empty(),
            BoxBounds::from_slices(&[-1.0], &[1.0]).unwrap(),
        )
        .unwrap();
        assert_abs_diff_eq!(d_coeffs(&di(), &flipped, &x).unwrap()[0], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn rd2_derivatives_double_integrator() {
        let c = di_constraints(-1.0, 1.0);
        let x = v(&[0.5, 1.0]);
        let d = rd2_derivatives(&di(), &c, &x, &v(&[-1.0])).unwrap();
        assert_abs_diff_eq!(d.h, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.h_dot, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.h_ddot, -1.0, epsilon = 1e-9);
        let d0 = rd2_derivatives(&di(), &c, &x, &v(&[0.0])).unwrap();
        let d1 = rd2_derivatives(&di(), &c, &x, &v(&[1.0])).unwrap();
        assert_eq!(d0.h_dot, d1.h_dot);
    }

    #[test]
    fn rd1_value_cases() {
        let c = ConstraintSet::new(
            Arc::new(LinearRd2::new(vec![1.0], 1.0)),
            BoxBounds::from_slices(&[10.0], &[20.0]).unwrap(),
            BoxBounds::from_slices(&[-1.0], &[1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(c.rd1_value(&v(&[15.0]), 0).unwrap(), -25.0);
        assert_eq!(c.rd1_value(&v(&[20.0]), 0).unwrap(), 0.0);
        assert_eq!(c.rd1_value(&v(&[10.0]), 0).unwrap(), 0.0);
        assert_eq!(c.rd1_value(&v(&[22.0]), 0).unwrap(), 24.0);
        assert!(matches!(
            c.rd1_value(&v(&[15.0]), 1),
            Err(Error::ChannelOutOfRange { index: 1, count: 1 })
        ));
    }

    #[test]
    fn box_bounds_validation() {
        assert!(BoxBounds::from_slices(&[1.0], &[1.0]).is_err());
        assert!(BoxBounds::from_slices(&[1.0, 0.0], &[2.0]).is_err());
        let c = ConstraintSet::new(
            Arc::new(LinearRd2::new(vec![1.0], 1.0)),
            BoxBounds::from_slices(&[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            BoxBounds::from_slices(&[-1.0], &[1.0]).unwrap(),
        );
        assert!(c.is_err());
    }
}
