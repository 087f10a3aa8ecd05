//! Fixed-wing UAV guidance model and the circular-tracking obstacle scenario.
//!
//! State `x = (P_x, P_y, P_z, V, gamma, psi)`: position, airspeed, flight
//! path angle and heading. Inputs `(u_V, u_gamma, u_psi)` enter as
//!
//! ```text
//! P'     = V (cos gamma cos psi, cos gamma sin psi, sin gamma)
//! V'     = u_V
//! gamma' = (u_gamma - g0 cos gamma) / V
//! psi'   = u_psi / (V cos gamma)
//! ```
//!
//! `g0` is the gravitational acceleration (not the input map).

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::model::{check_len, BoxBounds, ConstraintSet, SystemModel};
use crate::models::Ball;
use crate::sim::NominalController;
use crate::{Error, Matrix, Result, Vector};

/// Smallest distance of the path-angle bounds from `±pi/2`.
pub const PATH_ANGLE_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavModel {
    pub gravity: f64,
}

impl UavModel {
    pub fn new(gravity: f64) -> Self {
        Self { gravity }
    }

    fn unpack(&self, x: &Vector) -> Result<(f64, f64, f64)> {
        check_len("state", x, 6)?;
        let (speed, gamma, psi) = (x[3], x[4], x[5]);
        if !(speed > 0.0) {
            return Err(Error::Domain(format!("airspeed must be positive, got {speed}")));
        }
        if !(gamma.abs() < FRAC_PI_2) {
            return Err(Error::Domain(format!("flight path angle {gamma} outside (-pi/2, pi/2)")));
        }
        Ok((speed, gamma, psi))
    }
}

impl SystemModel for UavModel {
    fn rd2_dim(&self) -> usize {
        3
    }

    fn rd1_dim(&self) -> usize {
        3
    }

    fn f_r(&self, x: &Vector) -> Result<Vector> {
        let (speed, gamma, psi) = self.unpack(x)?;
        let (sg, cg) = gamma.sin_cos();
        let (sp, cp) = psi.sin_cos();
        Ok(Vector::from_column_slice(&[speed * cg * cp, speed * cg * sp, speed * sg]))
    }

    fn f_v(&self, x: &Vector) -> Result<Vector> {
        let (speed, gamma, _) = self.unpack(x)?;
        Ok(Vector::from_column_slice(&[0.0, -self.gravity * gamma.cos() / speed, 0.0]))
    }

    fn g_diag(&self, x: &Vector) -> Result<Vector> {
        let (speed, gamma, _) = self.unpack(x)?;
        Ok(Vector::from_column_slice(&[1.0, 1.0 / speed, 1.0 / (speed * gamma.cos())]))
    }

    fn f_r_jacobian(&self, x: &Vector) -> Result<Matrix> {
        let (speed, gamma, psi) = self.unpack(x)?;
        let (sg, cg) = gamma.sin_cos();
        let (sp, cp) = psi.sin_cos();
        let mut j = Matrix::zeros(3, 6);
        j[(0, 3)] = cg * cp;
        j[(1, 3)] = cg * sp;
        j[(2, 3)] = sg;
        j[(0, 4)] = -speed * sg * cp;
        j[(1, 4)] = -speed * sg * sp;
        j[(2, 4)] = speed * cg;
        j[(0, 5)] = -speed * cg * sp;
        j[(1, 5)] = speed * cg * cp;
        Ok(j)
    }

    fn f_v_jacobian(&self, x: &Vector) -> Result<Matrix> {
        let (speed, gamma, _) = self.unpack(x)?;
        let mut j = Matrix::zeros(3, 6);
        j[(1, 3)] = self.gravity * gamma.cos() / (speed * speed);
        j[(1, 4)] = self.gravity * gamma.sin() / speed;
        Ok(j)
    }

    fn g_diag_jacobian(&self, x: &Vector) -> Result<Matrix> {
        let (speed, gamma, _) = self.unpack(x)?;
        let (sg, cg) = gamma.sin_cos();
        let mut j = Matrix::zeros(3, 6);
        j[(1, 3)] = -1.0 / (speed * speed);
        j[(2, 3)] = -1.0 / (speed * speed * cg);
        j[(2, 4)] = sg / (speed * cg * cg);
        Ok(j)
    }
}

/// Circle flown counter-clockwise at constant altitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceCircle {
    pub center: [f64; 2],
    pub radius: f64,
    pub altitude: f64,
    /// Angular rate (rad/s); the reference speed is `radius * rate`.
    pub rate: f64,
}

impl ReferenceCircle {
    pub fn position(&self, t: f64) -> [f64; 3] {
        let (s, c) = (self.rate * t).sin_cos();
        [self.center[0] + self.radius * c, self.center[1] + self.radius * s, self.altitude]
    }

    pub fn velocity(&self, t: f64) -> [f64; 3] {
        let (s, c) = (self.rate * t).sin_cos();
        let w = self.radius * self.rate;
        [-w * s, w * c, 0.0]
    }

    pub fn speed(&self) -> f64 {
        (self.radius * self.rate).abs()
    }
}

/// Settings of the default shooting tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub horizon: f64,
    pub steps: usize,
    pub iterations: usize,
    pub position_weight: f64,
    pub velocity_weight: f64,
    pub input_weight: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            horizon: 0.5,
            steps: 10,
            iterations: 20,
            position_weight: 1.0,
            velocity_weight: 1.0,
            input_weight: 1e-3,
        }
    }
}

fn default_gravity() -> f64 {
    9.81
}

/// The obstacle-avoidance scenario. Defaults reconstruct a circle of radius
/// 100 m at 100 m altitude flown at 20 m/s, with an obstacle a quarter turn
/// ahead of the start whose inflated sphere swallows the circle. Its center
/// sits 8 m below the circle, so climbing over it is an option the velocity
/// boxes have to rule out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavScenario {
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    pub obstacle_center: [f64; 3],
    /// Radius of the sphere circumscribing the UAV.
    pub uav_radius: f64,
    pub obstacle_radius: f64,
    /// Clearance to keep on top of both radii.
    pub clearance: f64,
    pub speed_bounds: [f64; 2],
    pub path_angle_bounds: [f64; 2],
    /// `(u_V, u_gamma, u_psi)` lower bounds.
    pub input_lower: [f64; 3],
    pub input_upper: [f64; 3],
    pub reference: ReferenceCircle,
    pub initial_state: [f64; 6],
    #[serde(default)]
    pub tracker: TrackerConfig,
}

impl Default for UavScenario {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            obstacle_center: [0.0, 100.0, 92.0],
            uav_radius: 1.0,
            obstacle_radius: 15.0,
            clearance: 2.0,
            speed_bounds: [16.0, 22.0],
            path_angle_bounds: [-0.2, 0.2],
            input_lower: [-3.0, 0.0, -8.0],
            input_upper: [3.0, 19.6, 8.0],
            reference: ReferenceCircle {
                center: [0.0, 0.0],
                radius: 100.0,
                altitude: 100.0,
                rate: 0.2,
            },
            initial_state: [100.0, 0.0, 100.0, 20.0, 0.0, FRAC_PI_2],
            tracker: TrackerConfig::default(),
        }
    }
}

impl UavScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("scenario.uav.{field}"), msg));
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return bad("gravity", "must be positive");
        }
        for (name, r) in [
            ("uav_radius", self.uav_radius),
            ("obstacle_radius", self.obstacle_radius),
            ("clearance", self.clearance),
        ] {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(name, "must be non-negative");
            }
        }
        let [v_lo, v_hi] = self.speed_bounds;
        if !(v_lo > 0.0) {
            return bad("speed_bounds", "minimum speed must be positive");
        }
        if !(v_lo < v_hi) {
            return bad("speed_bounds", "minimum must be below maximum");
        }
        let [g_lo, g_hi] = self.path_angle_bounds;
        if !(g_lo < g_hi) {
            return bad("path_angle_bounds", "minimum must be below maximum");
        }
        if g_lo.abs().max(g_hi.abs()) > FRAC_PI_2 - PATH_ANGLE_MARGIN {
            return bad("path_angle_bounds", "must stay at least 0.05 rad away from ±pi/2");
        }
        for i in 0..3 {
            if !(self.input_lower[i] < self.input_upper[i]) {
                return bad("input_lower", "each lower bound must be below its upper bound");
            }
        }
        let r = &self.reference;
        if !(r.radius > 0.0 && r.rate.is_finite() && r.altitude.is_finite()) {
            return bad("reference", "radius must be positive and rate finite");
        }
        let t = &self.tracker;
        if !(t.horizon > 0.0 && t.steps > 0 && t.position_weight >= 0.0 && t.velocity_weight >= 0.0)
            || !(t.input_weight >= 0.0)
        {
            return bad("tracker", "horizon and steps must be positive, weights non-negative");
        }
        let [_, _, _, speed, gamma, _] = self.initial_state;
        if !(speed > 0.0 && gamma.abs() < FRAC_PI_2) || self.initial_state.iter().any(|s| !s.is_finite()) {
            return bad("initial_state", "must be finite with positive speed and |gamma| < pi/2");
        }
        Ok(())
    }

    pub fn model(&self) -> UavModel {
        UavModel::new(self.gravity)
    }

    pub fn inflated_radius(&self) -> f64 {
        self.uav_radius + self.obstacle_radius + self.clearance
    }

    /// `h_obs(P) = (R + R_obs + R_min)^2 - |P - P_obs|^2`.
    pub fn obstacle_constraint(&self) -> Ball {
        Ball::new(Vector::from_column_slice(&self.obstacle_center), self.inflated_radius())
    }

    /// Distance between the UAV sphere and the obstacle surface, in meters.
    pub fn obstacle_distance(&self, x: &Vector) -> f64 {
        let p = x.rows(0, 3);
        let c = Vector::from_column_slice(&self.obstacle_center);
        (p - c).norm() - self.uav_radius - self.obstacle_radius
    }

    /// Speed and path angle boxed, heading free.
    pub fn constraints(&self) -> Result<ConstraintSet> {
        ConstraintSet::new(
            Arc::new(self.obstacle_constraint()),
            BoxBounds::from_slices(
                &[self.speed_bounds[0], self.path_angle_bounds[0]],
                &[self.speed_bounds[1], self.path_angle_bounds[1]],
            )?,
            BoxBounds::from_slices(&self.input_lower, &self.input_upper)?,
        )
    }

    pub fn initial_state(&self) -> Vector {
        Vector::from_column_slice(&self.initial_state)
    }

    /// State region used by sampling audits: the velocity boxes, any heading,
    /// and positions within 50 m of the reference circle's bounding box.
    pub fn sample_region(&self) -> BoxBounds {
        let r = &self.reference;
        let reach = r.radius + 50.0;
        BoxBounds::from_slices(
            &[
                r.center[0] - reach,
                r.center[1] - reach,
                r.altitude - 50.0,
                self.speed_bounds[0],
                self.path_angle_bounds[0],
                -PI,
            ],
            &[
                r.center[0] + reach,
                r.center[1] + reach,
                r.altitude + 50.0,
                self.speed_bounds[1],
                self.path_angle_bounds[1],
                PI,
            ],
        )
        .expect("validated bounds")
    }

    pub fn tracker(&self) -> ShootingTracker {
        ShootingTracker::new(self)
    }
}

/// Single-shooting tracker of the reference circle.
///
/// Holds one input over the horizon, predicts with forward Euler and runs
/// projected gradient descent (central differences, backtracking) on
/// position and velocity error plus a small input penalty, warm-started
/// from the previous answer. Always returns an input inside the bounds.
#[derive(Debug, Clone)]
pub struct ShootingTracker {
    model: UavModel,
    reference: ReferenceCircle,
    config: TrackerConfig,
    lower: [f64; 3],
    upper: [f64; 3],
    warm: Option<[f64; 3]>,
}

impl ShootingTracker {
    pub fn new(scenario: &UavScenario) -> Self {
        Self {
            model: scenario.model(),
            reference: scenario.reference.clone(),
            config: scenario.tracker.clone(),
            lower: scenario.input_lower,
            upper: scenario.input_upper,
            warm: None,
        }
    }

    /// Input holding a level turn on the reference at state `x`.
    pub fn trim(&self, x: &Vector) -> [f64; 3] {
        let speed = x[3];
        let turn = speed * speed / self.reference.radius * self.reference.rate.signum();
        [0.0, self.model.gravity * x[4].cos(), turn]
    }

    fn clip(&self, u: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| u[i].clamp(self.lower[i], self.upper[i]))
    }

    fn cost(&self, x: &Vector, t: f64, u: &[f64; 3], trim: &[f64; 3]) -> f64 {
        let cfg = &self.config;
        let dt = cfg.horizon / cfg.steps as f64;
        let uv = Vector::from_column_slice(u);
        let mut y = x.clone();
        let mut cost = 0.0;
        for k in 1..=cfg.steps {
            let Ok(dy) = crate::model::eval_dynamics(&self.model, &y, &uv) else {
                return f64::INFINITY;
            };
            y += dy * dt;
            let tk = t + k as f64 * dt;
            let p = self.reference.position(tk);
            let pv = self.reference.velocity(tk);
            let Ok(vel) = self.model.f_r(&y) else {
                return f64::INFINITY;
            };
            for j in 0..3 {
                cost += cfg.position_weight * (y[j] - p[j]).powi(2) + cfg.velocity_weight * (vel[j] - pv[j]).powi(2);
            }
        }
        let effort: f64 = (0..3).map(|i| (u[i] - trim[i]).powi(2)).sum();
        cost / cfg.steps as f64 + cfg.input_weight * effort
    }

    pub fn solve(&mut self, x: &Vector, t: f64) -> Vector {
        let trim = self.trim(x);
        let scale: [f64; 3] = std::array::from_fn(|i| self.upper[i] - self.lower[i]);
        let mut u = self.clip(self.warm.unwrap_or(trim));
        let mut f = self.cost(x, t, &u, &trim);
        let mut step = 0.1;
        for _ in 0..self.config.iterations {
            // gradient in coordinates normalized by the input ranges
            let grad: [f64; 3] = std::array::from_fn(|i| {
                let h = 1e-4 * scale[i];
                let mut up = u;
                let mut dn = u;
                up[i] += h;
                dn[i] -= h;
                (self.cost(x, t, &up, &trim) - self.cost(x, t, &dn, &trim)) / (2.0 * h) * scale[i]
            });
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !(norm > 1e-12) {
                break;
            }
            let mut accepted = false;
            for _ in 0..12 {
                let trial = self.clip(std::array::from_fn(|i| u[i] - step * grad[i] / norm * scale[i]));
                let ft = self.cost(x, t, &trial, &trim);
                if ft < f {
                    u = trial;
                    f = ft;
                    accepted = true;
                    step = (step * 2.0).min(1.0);
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        self.warm = Some(u);
        Vector::from_column_slice(&u)
    }
}

impl NominalController for ShootingTracker {
    fn control(&mut self, x: &Vector, t: f64) -> Result<Vector> {
        Ok(self.solve(x, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{self, numeric_jacobian};
    use approx::assert_abs_diff_eq;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn level_flight_equilibrium() {
        let m = UavModel::new(9.81);
        let x = v(&[0.0, 0.0, 0.0, 20.0, 0.0, 0.0]);
        let dx = model::eval_dynamics(&m, &x, &v(&[0.0, 9.81, 0.0])).unwrap();
        assert_abs_diff_eq!(dx, v(&[20.0, 0.0, 0.0, 0.0, 0.0, 0.0]), epsilon = 1e-12);
        let x = v(&[0.0, 0.0, 0.0, 20.0, 0.0, FRAC_PI_2]);
        let r = m.f_r(&x).unwrap();
        assert_abs_diff_eq!(r, v(&[0.0, 20.0, 0.0]), epsilon = 1e-12);
        assert_abs_diff_eq!(m.g_diag(&x).unwrap()[2], 0.05, epsilon = 1e-15);
    }

    #[test]
    fn gamma_channel_modified_input_cancels() {
        let m = UavModel::new(9.81);
        let x = v(&[0.0, 0.0, 0.0, 20.0, 0.0, 0.0]);
        let mt = model::modified_input(&m, &x, &v(&[0.0, 9.81, 0.0])).unwrap();
        assert_abs_diff_eq!(mt[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn domain_errors() {
        let m = UavModel::new(9.81);
        assert!(matches!(m.f_r(&v(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0])), Err(Error::Domain(_))));
        assert!(matches!(m.g_diag(&v(&[0.0, 0.0, 0.0, 10.0, FRAC_PI_2, 0.0])), Err(Error::Domain(_))));
    }

    #[test]
    fn speed_equals_path_rate() {
        let m = UavModel::new(9.81);
        for (s, g, p) in [(17.0, 0.2, 1.0), (30.0, -1.2, -2.5), (0.5, 0.0, 3.0)] {
            let r = m.f_r(&v(&[1.0, 2.0, 3.0, s, g, p])).unwrap();
            assert_abs_diff_eq!(r.norm(), s, epsilon = 1e-12);
        }
    }

    #[test]
    fn analytic_jacobians_match_differences() {
        let m = UavModel::new(9.81);
        let x = v(&[10.0, -4.0, 80.0, 18.0, 0.25, 2.0]);
        for (a, n) in [
            (m.f_r_jacobian(&x).unwrap(), numeric_jacobian(|y| m.f_r(y), &x).unwrap()),
            (m.f_v_jacobian(&x).unwrap(), numeric_jacobian(|y| m.f_v(y), &x).unwrap()),
            (m.g_diag_jacobian(&x).unwrap(), numeric_jacobian(|y| m.g_diag(y), &x).unwrap()),
        ] {
            assert!((&a - &n).amax() <= 1e-6 * (1.0 + a.amax()), "{a} vs {n}");
        }
    }

    #[test]
    fn obstacle_function() {
        let s = UavScenario {
            uav_radius: 1.0,
            obstacle_radius: 4.0,
            clearance: 1.0,
            obstacle_center: [0.0; 3],
            ..Default::default()
        };
        use crate::model::Rd2Constraint;
        let h = s.obstacle_constraint();
        assert_abs_diff_eq!(h.value(&v(&[10.0, 0.0, 0.0])), -64.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.value(&v(&[0.0, 6.0, 0.0])), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.gradient(&v(&[6.0, 0.0, 0.0])), v(&[-12.0, 0.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn validation() {
        assert!(UavScenario::default().validate().is_ok());
        let s = UavScenario {
            path_angle_bounds: [-0.3, FRAC_PI_2],
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let s = UavScenario {
            speed_bounds: [0.0, 25.0],
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let s = UavScenario {
            input_lower: [3.0, 0.0, -8.0],
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn tracker_holds_trim_on_reference() {
        let s = UavScenario::default();
        let mut tr = s.tracker();
        let x = s.initial_state();
        let u = tr.solve(&x, 0.0);
        let trim = tr.trim(&x);
        assert_abs_diff_eq!(u[1], 9.81, epsilon = 0.2);
        assert_abs_diff_eq!(u[2], trim[2], epsilon = 0.5);
        assert!(u[0].abs() < 0.3, "{u}");
    }

    #[test]
    fn tracker_saturates_toward_far_reference() {
        let s = UavScenario::default();
        let mut tr = s.tracker();
        let x = v(&[100.0, 0.0, 0.0, 20.0, 0.0, FRAC_PI_2]);
        let u = tr.solve(&x, 0.0);
        assert!(u[1] > 0.9 * s.input_upper[1], "{u}");
    }
}
