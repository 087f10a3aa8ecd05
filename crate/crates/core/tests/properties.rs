use std::sync::Arc;

use evasafe::evading::{self, EvadingConfig};
use evasafe::model::{self, BoxBounds, ConstraintSet, SystemModel};
use evasafe::models::{DoubleIntegrator, LinearRd2};
use evasafe::sim::config::sample_states;
use evasafe::sim::SimConfig;
use evasafe::uav::{UavModel, UavScenario};
use evasafe::{Vector, Zcbf, ZcbfConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(xs: &[f64]) -> Vector {
    Vector::from_column_slice(xs)
}

#[test]
fn smooth_min_sits_below_both_arguments() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let mu = rng.random_range(0.01..50.0);
        let nu = rng.random_range(0.01..50.0);
        let eps = rng.random_range(0.0..1.0) * 4.0 * mu * nu;
        let s = model::smooth_min(mu, nu, eps);
        assert!(s < mu.min(nu) || eps == 0.0, "{mu} {nu} {eps} -> {s}");
        // -mu < s is what keeps the maneuver admissible
        assert!(s > -mu.min(nu), "{mu} {nu} {eps} -> {s}");
        assert!(mu.min(nu) - s <= eps.sqrt() / 2.0 + 1e-12);
    }
}

#[test]
fn uav_evading_input_is_strictly_admissible() {
    let config = SimConfig::uav_default();
    let sc = config.build().unwrap();
    let (lo, hi) = (sc.constraints.input().lower(), sc.constraints.input().upper());
    for x in sample_states(&sc.sample_region, 10_000, 5) {
        let terms = evading::evaluate(sc.model.as_ref(), &sc.constraints, &sc.evading, &x).unwrap();
        for i in 0..3 {
            assert!(lo[i] < terms.input[i] && terms.input[i] < hi[i], "{x} {}", terms.input);
            assert!(terms.modified[i].abs() < terms.cap[i]);
            // u = u~ - f_v / g
            let back = model::modified_input(sc.model.as_ref(), &x, &terms.input).unwrap();
            assert!((back[i] - terms.modified[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn boxed_law_pushes_inward_on_the_box_boundary() {
    let sc = SimConfig::uav_default().build().unwrap();
    let rd1 = sc.constraints.rd1().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for mut x in sample_states(&sc.sample_region, 2_000, 7) {
        let i = rng.random_range(0..2);
        x[3 + i] = if rng.random_bool(0.5) { rd1.lower()[i] } else { rd1.upper()[i] };
        let dec = evading::boundary_decay(sc.model.as_ref(), &sc.constraints, &sc.evading, &x, i).unwrap();
        assert!(dec <= 1e-12, "{x}: {dec}");
    }
}

fn central_jacobian(f: impl Fn(&Vector) -> Vector, x: &Vector) -> evasafe::Matrix {
    let rows = f(x).len();
    let mut jac = evasafe::Matrix::zeros(rows, x.len());
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        jac.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

#[test]
fn uav_jacobians_match_central_differences() {
    let model = UavModel::new(9.81);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let x = v(&[
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
            rng.random_range(0.0..200.0),
            rng.random_range(5.0..40.0),
            rng.random_range(-1.4..1.4),
            rng.random_range(-4.0..4.0),
        ]);
        let pairs = [
            (model.f_r_jacobian(&x).unwrap(), central_jacobian(|y| model.f_r(y).unwrap(), &x)),
            (model.f_v_jacobian(&x).unwrap(), central_jacobian(|y| model.f_v(y).unwrap(), &x)),
            (model.g_diag_jacobian(&x).unwrap(), central_jacobian(|y| model.g_diag(y).unwrap(), &x)),
        ];
        for (analytic, fd) in pairs {
            let scale = fd.amax().max(1e-12);
            assert!((&analytic - &fd).amax() <= 1e-6 * scale, "{x}\n{analytic}\n{fd}");
        }
    }
}

#[test]
fn uav_gamma_authority_holds_at_the_box_corners() {
    // mu, nu > 0 on the gamma channel is u_min < g0 cos(gamma) < u_max,
    // and cos(gamma) is extremal at the box ends and at zero.
    let s = UavScenario::default();
    for gamma in [s.path_angle_bounds[0], 0.0, s.path_angle_bounds[1]] {
        let hold = s.gravity * f64::cos(gamma);
        assert!(s.input_lower[1] < hold && hold < s.input_upper[1], "{gamma}");
    }
    let model = s.model();
    let cons = s.constraints().unwrap();
    for speed in s.speed_bounds {
        for gamma in s.path_angle_bounds {
            let x = v(&[0.0, 0.0, 100.0, speed, gamma, 0.3]);
            let (mu, nu) = model::mu_nu(&model, &cons, &x).unwrap();
            assert!(mu.iter().chain(nu.iter()).all(|m| *m > 0.0));
        }
    }
}

#[test]
fn uav_ground_speed_equals_airspeed() {
    let model = UavModel::new(9.81);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..1000 {
        let x = v(&[
            0.0,
            0.0,
            0.0,
            rng.random_range(1.0..40.0),
            rng.random_range(-1.5..1.5),
            rng.random_range(-4.0..4.0),
        ]);
        assert!((model.f_r(&x).unwrap().norm() - x[3]).abs() <= 1e-12 * x[3]);
    }
}

fn di_setup() -> (DoubleIntegrator, ConstraintSet, EvadingConfig) {
    let cons = ConstraintSet::new(
        Arc::new(LinearRd2::new(vec![1.0], 1.0)),
        BoxBounds::from_slices(&[-2.0], &[2.0]).unwrap(),
        BoxBounds::from_slices(&[-1.0], &[1.0]).unwrap(),
    )
    .unwrap();
    let ev = EvadingConfig {
        epsilon: 1e-4,
        k: vec![10.0],
        k1: vec![3.0],
        k2: vec![1.0],
        k3: vec![10.0],
    };
    (DoubleIntegrator::new(1), cons, ev)
}

#[test]
fn barrier_bounds_the_current_constraint_value() {
    let (model, cons, ev) = di_setup();
    let cfg = ZcbfConfig::default();
    let zcbf = Zcbf::new(&model, &cons, &ev, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..500 {
        let x = v(&[rng.random_range(-4.0..2.0), rng.random_range(-2.0..2.0)]);
        let h = zcbf.evaluate(&x).unwrap();
        assert!(h.value >= x[0] - 1.0 - 1e-12);
        assert!(h.t_star >= 0.0 && h.t_star <= cfg.horizon);
        assert!(!h.truncated);
    }
}

#[test]
fn barrier_does_not_increase_along_the_maneuver() {
    // H is a supremum over the remaining flow, so it can only fall.
    let (model, cons, ev) = di_setup();
    let cfg = ZcbfConfig::default();
    let zcbf = Zcbf::new(&model, &cons, &ev, &cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let x = v(&[rng.random_range(-4.0..0.5), rng.random_range(-1.5..1.9)]);
        let traj = zcbf.rollout(&x).unwrap();
        let h0 = zcbf.evaluate(&x).unwrap().value;
        for y in traj.states.iter().step_by(25).take(20) {
            assert!(zcbf.evaluate(y).unwrap().value <= h0 + 1e-6);
        }
    }
}

#[test]
fn uav_barrier_gradient_matches_differences() {
    let sc = SimConfig::uav_default().build().unwrap();
    let filter = sc.proposed_filter().unwrap();
    let zcbf = filter.zcbf();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut checked = 0;
    while checked < 20 {
        let x = v(&[
            rng.random_range(-40.0..40.0),
            rng.random_range(40.0..70.0),
            rng.random_range(85.0..105.0),
            rng.random_range(16.0..22.0),
            rng.random_range(-0.2..0.2),
            rng.random_range(0.0..std::f64::consts::PI),
        ]);
        let eval = zcbf.evaluate_with_gradient(&x).unwrap();
        if eval.switching {
            continue;
        }
        let grad = eval.gradient.unwrap();
        for j in 0..6 {
            let h = 1e-5 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (zcbf.evaluate(&xp).unwrap().value - zcbf.evaluate(&xm).unwrap().value) / (2.0 * h);
            assert!((grad[j] - fd).abs() <= 1e-4 * grad.norm().max(1.0), "{x} {j}: {} vs {fd}", grad[j]);
        }
        checked += 1;
    }
}

#[test]
fn assumption_violations_are_reported_per_channel() {
    let model = UavModel::new(9.81);
    let cons = ConstraintSet::new(
        Arc::new(LinearRd2::new(vec![0.0, 0.0, 1.0], 1000.0)),
        BoxBounds::empty(),
        // gamma-input ceiling below gravity
        BoxBounds::from_slices(&[-3.0, 0.0, -8.0], &[3.0, 5.0, 8.0]).unwrap(),
    )
    .unwrap();
    let ev = EvadingConfig {
        epsilon: 1e-3,
        k: vec![1.0; 3],
        k1: vec![],
        k2: vec![],
        k3: vec![],
    };
    let err = evading::evaluate(&model, &cons, &ev, &v(&[0.0, 0.0, 0.0, 20.0, 0.0, 0.0])).unwrap_err();
    assert_eq!(err.channel(), Some(1), "{err}");
}
