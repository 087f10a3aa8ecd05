//! The smooth nominal evading maneuver `u*`.
//!
//! Each channel is shaped in terms of the modified input `u~_i`, whose
//! admissible range at `x` is `[-mu_i, nu_i]`:
//!
//! * free channels (`i >= c`) push `h_r''` down through `tanh(-k_i d_i)`;
//! * boxed channels (`i < c`) steer `v_i` toward a target inside its box
//!   that leans toward the side lowering `h_r''`, so the velocity can never
//!   leave the box under the maneuver.
//!
//! Both shapes stay strictly below `u~max_i(x) < min(mu_i, nu_i)` in
//! magnitude, hence `u*(x)` is strictly inside the input box.

use serde::{Deserialize, Serialize};

use crate::model::{self, check_len, ConstraintSet, SystemModel};
use crate::{Error, Result, Vector};

/// Gains and smoothing for the evading maneuver.
///
/// `k` has one entry per input channel and is used on channels `c..m`
/// (and on every channel by the position-only baseline). `k1`, `k2`, `k3`
/// have one entry per boxed channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvadingConfig {
    pub epsilon: f64,
    pub k: Vec<f64>,
    #[serde(default)]
    pub k1: Vec<f64>,
    #[serde(default)]
    pub k2: Vec<f64>,
    #[serde(default)]
    pub k3: Vec<f64>,
}

impl EvadingConfig {
    pub fn validate(&self, m: usize, c: usize) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("evading.epsilon", "must be positive and finite"));
        }
        let positive = |name: &str, gains: &[f64], len: usize| -> Result<()> {
            if gains.len() != len {
                return Err(Error::config(
                    format!("evading.{name}"),
                    format!("expected {len} gains, got {}", gains.len()),
                ));
            }
            if let Some(i) = gains.iter().position(|g| !(*g > 0.0 && g.is_finite())) {
                return Err(Error::config(format!("evading.{name}[{i}]"), "gains must be positive"));
            }
            Ok(())
        };
        positive("k", &self.k, m)?;
        positive("k1", &self.k1, c)?;
        positive("k2", &self.k2, c)?;
        positive("k3", &self.k3, c)
    }

    /// Gains normalized over a set of sampled states.
    ///
    /// Each tanh argument is scaled to order one by the median magnitude of
    /// what it multiplies (`d_i`, `g_i` or `g_i d_i`), `k2 = 4 / (v_max - v_min)`,
    /// and `epsilon` is `1e-4` of the smallest `4 mu_i nu_i` over the samples.
    pub fn from_samples(
        model: &dyn SystemModel,
        constraints: &ConstraintSet,
        samples: &[Vector],
    ) -> Result<Self> {
        let m = model.rd1_dim();
        let c = constraints.boxed_count();
        if samples.is_empty() {
            return Err(Error::config("evading", "gain normalization needs samples"));
        }
        let mut d_abs = vec![Vec::with_capacity(samples.len()); m];
        let mut g_abs = vec![Vec::with_capacity(samples.len()); m];
        let mut gd_abs = vec![Vec::with_capacity(samples.len()); m];
        let mut min_bound = f64::INFINITY;
        for x in samples {
            let g = model::checked_g(model, x)?;
            let d = model::d_coeffs_with_g(model, constraints, x, &g)?;
            let (mu, nu) = model::mu_nu(model, constraints, x)?;
            for i in 0..m {
                d_abs[i].push(d[i].abs());
                g_abs[i].push(g[i].abs());
                gd_abs[i].push((g[i] * d[i]).abs());
                min_bound = min_bound.min(4.0 * mu[i] * nu[i]);
            }
        }
        let inv_median = |vals: &mut Vec<f64>| {
            vals.sort_by(f64::total_cmp);
            let med = vals[vals.len() / 2];
            if med > 1e-12 {
                1.0 / med
            } else {
                1.0
            }
        };
        let rd1 = constraints.rd1();
        Ok(Self {
            epsilon: 1e-4 * min_bound,
            k: d_abs.iter_mut().map(inv_median).collect(),
            k1: g_abs.iter_mut().take(c).map(inv_median).collect(),
            k2: (0..c).map(|i| 4.0 / (rd1.upper()[i] - rd1.lower()[i])).collect(),
            k3: gd_abs.iter_mut().take(c).map(inv_median).collect(),
        })
    }

    /// Copy for the position-only baseline: all channels free.
    pub fn unconstrained(&self) -> Self {
        Self {
            epsilon: self.epsilon,
            k: self.k.clone(),
            k1: Vec::new(),
            k2: Vec::new(),
            k3: Vec::new(),
        }
    }
}

/// Free-channel law `u~max tanh(-k d)`.
pub fn free_law(cap: f64, k: f64, d: f64) -> f64 {
    cap * (-k * d).tanh()
}

/// Boxed-channel law
/// `u~max tanh(-k1 g) tanh(k2 (v - (v^d tanh(-k3 g d) + v^s)))`.
#[allow(clippy::too_many_arguments)]
pub fn boxed_law(
    cap: f64,
    g: f64,
    d: f64,
    v: f64,
    half_width: f64,
    center: f64,
    gains: [f64; 3],
) -> f64 {
    let [k1, k2, k3] = gains;
    let target = half_width * (-k3 * g * d).tanh() + center;
    cap * (-k1 * g).tanh() * (k2 * (v - target)).tanh()
}

/// Everything the maneuver computes at one state.
#[derive(Debug, Clone)]
pub struct EvadingTerms {
    pub g: Vector,
    /// `f_v / g_v`.
    pub drift_ratio: Vector,
    pub mu: Vector,
    pub nu: Vector,
    pub cap: Vector,
    pub d: Vector,
    /// `u~*`.
    pub modified: Vector,
    /// `u* = u~* - f_v / g_v`.
    pub input: Vector,
}

/// Evaluates the maneuver on every channel.
pub fn evaluate(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    config: &EvadingConfig,
    x: &Vector,
) -> Result<EvadingTerms> {
    let (n, m) = (model.rd2_dim(), model.rd1_dim());
    check_len("state", x, n + m)?;
    let c = constraints.boxed_count();
    let g = model::checked_g(model, x)?;
    let drift_ratio = model.f_v(x)?.component_div(&g);
    let (mu, nu) = model::mu_nu_from_ratio(constraints, &drift_ratio)?;
    let cap = model::smooth_cap_from(&mu, &nu, config.epsilon)?;
    let d = model::d_coeffs_with_g(model, constraints, x, &g)?;
    let rd1 = constraints.rd1();
    let modified = Vector::from_fn(m, |i, _| {
        if i < c {
            boxed_law(
                cap[i],
                g[i],
                d[i],
                x[n + i],
                rd1.half_width(i),
                rd1.center(i),
                [config.k1[i], config.k2[i], config.k3[i]],
            )
        } else {
            free_law(cap[i], config.k[i], d[i])
        }
    });
    let input = &modified - &drift_ratio;
    Ok(EvadingTerms {
        g,
        drift_ratio,
        mu,
        nu,
        cap,
        d,
        modified,
        input,
    })
}

/// `u~*_i` on a free channel `i >= c`.
pub fn evade_unconstrained(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    config: &EvadingConfig,
    x: &Vector,
    i: usize,
) -> Result<f64> {
    let m = model.rd1_dim();
    if i >= m || i < constraints.boxed_count() {
        return Err(Error::config(format!("channel {i}"), "not a free channel"));
    }
    Ok(evaluate(model, constraints, config, x)?.modified[i])
}

/// `u~*_i` on a boxed channel `i < c`.
pub fn evade_constrained(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    config: &EvadingConfig,
    x: &Vector,
    i: usize,
) -> Result<f64> {
    if i >= constraints.boxed_count() {
        return Err(Error::ChannelOutOfRange {
            index: i,
            count: constraints.boxed_count(),
        });
    }
    Ok(evaluate(model, constraints, config, x)?.modified[i])
}

/// `u*(x)` in terms of the original input.
pub fn evading_input(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    config: &EvadingConfig,
    x: &Vector,
) -> Result<Vector> {
    Ok(evaluate(model, constraints, config, x)?.input)
}

/// `h_{v_i}'` under the maneuver: `2 (v_i - v^s_i) g_{v_i} u~*_i`.
pub fn boundary_decay(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    config: &EvadingConfig,
    x: &Vector,
    i: usize,
) -> Result<f64> {
    if i >= constraints.boxed_count() {
        return Err(Error::ChannelOutOfRange {
            index: i,
            count: constraints.boxed_count(),
        });
    }
    let terms = evaluate(model, constraints, config, x)?;
    let vi = x[model.rd2_dim() + i];
    Ok(2.0 * (vi - constraints.rd1().center(i)) * terms.g[i] * terms.modified[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BoxBounds;
    use crate::models::{DoubleIntegrator, FnModel, FnRd2, LinearRd2};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    /// Bang-bang minimizer of `sum d_i u_i` over the input box.
    fn greedy_input_oracle(d: &Vector, constraints: &ConstraintSet) -> Result<Vector> {
        let input = constraints.input();
        let mut u = Vector::zeros(d.len());
        for i in 0..d.len() {
            u[i] = if d[i] > 0.0 {
                input.lower()[i]
            } else if d[i] < 0.0 {
                input.upper()[i]
            } else {
                return Err(Error::GreedyTie { channel: i });
            };
        }
        Ok(u)
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn free_law_values() {
        assert_eq!(free_law(1.0, 1.0, 0.0), 0.0);
        assert_abs_diff_eq!(free_law(1.0, 1.0, 3.0), -0.995055, epsilon = 1e-6);
        assert_abs_diff_eq!(free_law(1.0, 10.0, -1.0), 0.99999999, epsilon = 1e-8);
    }

    #[test]
    fn boxed_law_values() {
        assert_eq!(boxed_law(1.0, 1.0, 0.0, 15.0, 5.0, 15.0, [1.0, 1.0, 1.0]), 0.0);
        let u = boxed_law(1.0, 1.0, 0.0, 20.0, 5.0, 15.0, [1.0, 1.0, 1.0]);
        assert_abs_diff_eq!(u, (-1.0f64).tanh() * 5.0f64.tanh(), epsilon = 1e-15);
        assert_abs_diff_eq!(u, -0.761525, epsilon = 1e-6);
        // boundary decay at v_max
        assert_abs_diff_eq!(2.0 * 5.0 * 1.0 * u, -7.61525, epsilon = 1e-5);
    }

    #[test]
    fn boxed_law_sign_at_upper_face() {
        for d in [-50.0, -1.0, 0.0, 1.0, 50.0] {
            for g in [0.01, 1.0, 30.0] {
                let u = boxed_law(1.0, g, d, 20.0, 5.0, 15.0, [1.0, 0.4, 1.0]);
                assert!(u <= 0.0, "d={d} g={g} u={u}");
            }
        }
    }

    fn boxed_1d() -> (DoubleIntegrator, ConstraintSet, EvadingConfig) {
        let cons = ConstraintSet::new(
            Arc::new(LinearRd2::new(vec![1.0], 1.0)),
            BoxBounds::from_slices(&[-2.0], &[2.0]).unwrap(),
            BoxBounds::from_slices(&[-1.0], &[1.0]).unwrap(),
        )
        .unwrap();
        let cfg = EvadingConfig {
            epsilon: 1e-4,
            k: vec![1.0],
            k1: vec![1.0],
            k2: vec![1.0],
            k3: vec![1.0],
        };
        (DoubleIntegrator::new(1), cons, cfg)
    }

    #[test]
    fn zero_drift_input_equals_modified() {
        let (m, c, cfg) = boxed_1d();
        let x = v(&[0.2, 0.7]);
        let t = evaluate(&m, &c, &cfg, &x).unwrap();
        assert_eq!(t.input, t.modified);
        assert_eq!(evade_constrained(&m, &c, &cfg, &x, 0).unwrap(), t.modified[0]);
        assert!(evade_unconstrained(&m, &c, &cfg, &x, 0).is_err());
        assert!(boundary_decay(&m, &c, &cfg, &x, 1).is_err());
    }

    #[test]
    fn boundary_decay_at_center_is_zero() {
        let (m, c, cfg) = boxed_1d();
        assert_eq!(boundary_decay(&m, &c, &cfg, &v(&[0.3, 0.0]), 0).unwrap(), 0.0);
    }

    #[test]
    fn greedy_oracle_cases() {
        let cons = ConstraintSet::new(
            Arc::new(LinearRd2::new(vec![1.0, 1.0], 1.0)),
            BoxBounds::empty(),
            BoxBounds::from_slices(&[-1.0, -1.0], &[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert_eq!(greedy_input_oracle(&v(&[1.0, -1.0]), &cons).unwrap(), v(&[-1.0, 1.0]));
        assert!(matches!(
            greedy_input_oracle(&v(&[0.0, 1.0]), &cons),
            Err(Error::GreedyTie { channel: 0 })
        ));
    }

    #[test]
    fn smooth_law_approaches_greedy_with_large_gain() {
        // 2-D double integrator, unit box, h = r1 + r2 - 1 with scaled velocities.
        let model = FnModel::new(
            2,
            2,
            |x| v(&[0.5 * x[2], 2.0 * x[3]]),
            |_| Vector::zeros(2),
            |_| Vector::from_element(2, 1.0),
        );
        let cons = ConstraintSet::new(
            Arc::new(FnRd2::new(|r| r[0] - r[1] - 1.0)),
            BoxBounds::empty(),
            BoxBounds::from_slices(&[-1.0, -1.0], &[1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let cfg = EvadingConfig {
            epsilon: 1e-4,
            k: vec![100.0, 100.0],
            k1: vec![],
            k2: vec![],
            k3: vec![],
        };
        let x = v(&[0.0, 0.0, 0.3, -0.2]);
        let t = evaluate(&model, &cons, &cfg, &x).unwrap();
        let greedy = greedy_input_oracle(&t.d, &cons).unwrap();
        for i in 0..2 {
            assert!(t.d[i].abs() >= 0.1);
            let bound = t.cap[i] * (1.0 - (100.0 * t.d[i].abs()).tanh()) + (1.0 - t.cap[i]);
            assert!((t.input[i] - greedy[i]).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn from_samples_gains_are_positive() {
        let (m, c, _) = boxed_1d();
        let samples: Vec<Vector> = (0..20).map(|k| v(&[0.1 * k as f64, -1.5 + 0.15 * k as f64])).collect();
        let cfg = EvadingConfig::from_samples(&m, &c, &samples).unwrap();
        cfg.validate(1, 1).unwrap();
        assert_abs_diff_eq!(cfg.k2[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.epsilon, 1e-4 * 4.0, epsilon = 1e-15);
    }

    #[test]
    fn validate_rejects_bad_gains() {
        let (_, _, mut cfg) = boxed_1d();
        cfg.k3[0] = 0.0;
        assert!(cfg.validate(1, 1).is_err());
        let (_, _, mut cfg) = boxed_1d();
        cfg.epsilon = -1.0;
        assert!(cfg.validate(1, 1).is_err());
        let (_, _, cfg) = boxed_1d();
        assert!(cfg.validate(2, 1).is_err());
    }

    proptest! {
        /// The maneuver never exceeds the smooth cap, so it is strictly admissible.
        #[test]
        fn strictly_admissible(
            r in -5.0..5.0f64,
            vel in -3.0..3.0f64,
            drift in -0.5..0.5f64,
            gain in prop_oneof![-3.0..-0.8f64, 0.8..3.0f64],
        ) {
            let model = FnModel::new(
                1, 1,
                |x| Vector::from_element(1, x[1] + 0.1 * x[0].sin()),
                move |x| Vector::from_element(1, drift * (1.0 + 0.1 * x[1].cos())),
                move |_| Vector::from_element(1, gain),
            );
            let cons = ConstraintSet::new(
                Arc::new(LinearRd2::new(vec![1.0], 1.0)),
                BoxBounds::from_slices(&[-2.0], &[2.0]).unwrap(),
                BoxBounds::from_slices(&[-1.0], &[1.0]).unwrap(),
            ).unwrap();
            let cfg = EvadingConfig { epsilon: 1e-3, k: vec![2.0], k1: vec![3.0], k2: vec![1.0], k3: vec![2.0] };
            let x = v(&[r, vel]);
            let t = evaluate(&model, &cons, &cfg, &x).unwrap();
            prop_assert!(t.modified[0].abs() < t.cap[0]);
            prop_assert!(t.cap[0] < t.mu[0].min(t.nu[0]));
            prop_assert!(t.input[0] > -1.0 && t.input[0] < 1.0);
        }
    }
}
