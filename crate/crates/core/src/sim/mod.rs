//! Closed-loop simulation: a controller sampled every period with
//! zero-order hold, the plant integrated with fixed-step RK4 in between.

pub mod audit;
pub mod config;
pub mod log;
pub mod metrics;

use crate::filter::{Membership, SafetyFilter};
use crate::integrate::rk4_step;
use crate::model::{self, SystemModel};
use crate::{Error, Result, Vector};

pub use audit::{audit_assumptions, AuditReport};
pub use config::{Mode, Scenario, SimConfig};
pub use log::{LogLayout, LogRow, SimLog};
pub use metrics::Metrics;

/// Produces the performance input `u_hat` the safety filter corrects.
///
/// Implementations may keep state between calls (warm starts), so use one
/// instance per simulated plant.
pub trait NominalController: Send {
    fn control(&mut self, x: &Vector, t: f64) -> Result<Vector>;
}

#[derive(Debug)]
pub struct SimRun {
    pub log: SimLog,
    pub warnings: Vec<String>,
}

/// A run that stopped early. `log` holds every row written before the error.
#[derive(Debug)]
pub struct SimAbort {
    pub log: Option<SimLog>,
    pub error: Error,
}

impl SimAbort {
    fn before_start(error: Error) -> Self {
        Self { log: None, error }
    }

    /// True when the run never started because the configuration was bad.
    pub fn is_config_error(&self) -> bool {
        self.log.is_none() && matches!(self.error, Error::InvalidConfig { .. })
    }
}

fn input_violation(u: &Vector, lower: &Vector, upper: &Vector) -> f64 {
    (0..u.len())
        .map(|i| (lower[i] - u[i]).max(u[i] - upper[i]))
        .fold(0.0, f64::max)
}

/// Runs the configured scenario, writing the log file if one is set.
pub fn run_sim(config: &SimConfig) -> std::result::Result<SimRun, SimAbort> {
    let scenario = config.build().map_err(SimAbort::before_start)?;
    run_scenario(config, scenario)
}

/// Like [`run_sim`] with an already built (possibly modified) scenario.
pub fn run_scenario(config: &SimConfig, mut sc: Scenario) -> std::result::Result<SimRun, SimAbort> {
    let model = sc.model.clone();
    let n = model.rd2_dim();
    let c = sc.constraints.boxed_count();
    let layout = LogLayout {
        states: sc.state_names.clone(),
        inputs: sc.input_names.clone(),
        boxed: (0..c).map(|i| sc.state_names[n + i].clone()).collect(),
        diagnostics: config.output.diagnostics,
    };
    let mut writer = match &config.output.log {
        Some(path) => Some(log::LogWriter::create(path, &layout).map_err(SimAbort::before_start)?),
        None => None,
    };
    let proposed = sc.proposed_filter().map_err(SimAbort::before_start)?;
    let filter = match config.sim.mode {
        Mode::Proposed => Some(proposed.clone()),
        Mode::Baseline => Some(sc.baseline_filter().map_err(SimAbort::before_start)?),
        Mode::NominalOnly => None,
    };

    let mut log = SimLog::new(layout);
    let mut warnings = Vec::new();
    let mut x = sc.initial_state.clone();
    match proposed.membership(&x) {
        Ok(r) if r.status == Membership::Inside => {}
        Ok(r) => warnings.push(format!(
            "initial state is not inside the ultimate set (H = {:e}, hv = {:?}); the filter runs best effort",
            r.zcbf, r.rd1
        )),
        Err(e) => warnings.push(format!("initial membership could not be evaluated: {e}")),
    }

    let rows = config.row_count();
    let substeps = config.substeps();
    let period = config.sim.period;
    let dt = period / substeps as f64;
    let mut u_prev: Option<Vector> = None;
    for k in 0..rows {
        let t = k as f64 * period;
        let row = control_row(config, &mut sc, filter.as_ref(), &proposed, &x, t, u_prev.as_ref());
        let row = match row {
            Ok(row) => row,
            Err(error) => return Err(SimAbort { log: Some(log), error }),
        };
        let u = Vector::from_column_slice(&row.input);
        if let Some(w) = writer.as_mut() {
            if let Err(error) = w.write(&row) {
                return Err(SimAbort { log: Some(log), error });
            }
        }
        log.rows.push(row);
        if k + 1 == rows {
            break;
        }
        for _ in 0..substeps {
            match rk4_step(|y| model::eval_dynamics(model.as_ref(), y, &u), &x, dt) {
                Ok(next) => x = next,
                Err(error) => {
                    let error = Error::Rollout {
                        time: t,
                        source: Box::new(error),
                    };
                    return Err(SimAbort { log: Some(log), error });
                }
            }
        }
        u_prev = Some(u);
    }
    Ok(SimRun { log, warnings })
}

fn control_row(
    config: &SimConfig,
    sc: &mut Scenario,
    filter: Option<&SafetyFilter>,
    proposed: &SafetyFilter,
    x: &Vector,
    t: f64,
    u_prev: Option<&Vector>,
) -> Result<LogRow> {
    let model: &dyn SystemModel = sc.model.as_ref();
    let input = sc.constraints.input();
    let u_hat = input.clamp(&sc.nominal.control(x, t)?);
    let u_prev = u_prev.cloned().unwrap_or_else(|| u_hat.clone());

    let n = model.rd2_dim();
    let v = x.rows(n, x.len() - n).into_owned();
    let rd1 = (0..sc.constraints.boxed_count())
        .map(|i| sc.constraints.rd1_value(&v, i))
        .collect::<Result<Vec<_>>>()?;

    let mut row = LogRow {
        time: t,
        state: x.iter().copied().collect(),
        nominal: u_hat.iter().copied().collect(),
        input: Vec::new(),
        zcbf: f64::NAN,
        t_star: f64::NAN,
        rd1,
        distance: (sc.distance)(x),
        input_violation: 0.0,
        fallback: false,
        best_effort: false,
        active: 0,
        solve_time: 0.0,
        diagnostics: None,
    };
    let u = match filter {
        Some(f) => {
            let r = f.solve(x, &u_hat, &u_prev)?;
            row.zcbf = r.zcbf;
            row.t_star = r.t_star;
            row.fallback = r.used_fallback;
            row.best_effort = r.best_effort;
            row.active = r.active.bits();
            if config.output.timing {
                row.solve_time = r.solve_time.as_secs_f64();
            }
            if config.output.diagnostics {
                row.diagnostics = Some(log::Diagnostics {
                    margin: r.zcbf_margin,
                    membership: r.membership,
                    switching: r.switching,
                    truncated: r.truncated,
                });
            }
            r.u_safe
        }
        None => {
            // The unfiltered run still reports where it stands.
            if let Ok(r) = proposed.membership(x) {
                row.zcbf = r.zcbf;
                row.t_star = r.evaluation.t_star;
                if config.output.diagnostics {
                    row.diagnostics = Some(log::Diagnostics {
                        margin: f64::NAN,
                        membership: r.status,
                        switching: r.evaluation.switching,
                        truncated: r.evaluation.truncated,
                    });
                }
            }
            u_hat
        }
    };
    row.input_violation = input_violation(&u, input.lower(), input.upper());
    row.input = u.iter().copied().collect();
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DI: &str = r#"
        [scenario.double_integrator]
        wall = 1.0
        velocity_bounds = [-2.0, 2.0]
        input_bounds = [-1.0, 1.0]
        target = 3.0
        initial_state = [-2.0, 0.0]

        [evading]
        epsilon = 1e-4
        k = [10.0]
        k1 = [3.0]
        k2 = [1.0]
        k3 = [10.0]

        [zcbf]
        horizon = 8.0

        [sim]
        duration = 10.0
    "#;

    #[test]
    fn double_integrator_stops_at_the_wall() {
        let config: SimConfig = DI.parse().unwrap();
        let run = run_sim(&config).unwrap();
        assert!(run.warnings.is_empty(), "{:?}", run.warnings);
        assert_eq!(run.log.rows.len(), 201);
        let m = Metrics::from_log(&run.log).unwrap();
        assert!(m.min_distance > 0.0, "{m}");
        assert_eq!(m.input_violations, 0);
        assert_eq!(m.rd1_violations, 0);
        let last = run.log.rows.last().unwrap();
        assert!(last.state[0] > 0.5, "{:?}", last.state);
    }

    #[test]
    fn nominal_only_hits_the_wall() {
        let mut config: SimConfig = DI.parse().unwrap();
        config.sim.mode = Mode::NominalOnly;
        let run = run_sim(&config).unwrap();
        let m = Metrics::from_log(&run.log).unwrap();
        assert!(m.min_distance < 0.0, "{m}");
    }

    #[test]
    fn times_strictly_increase() {
        let mut config: SimConfig = DI.parse().unwrap();
        config.sim.duration = 1.0;
        let run = run_sim(&config).unwrap();
        assert!(run.log.rows.windows(2).all(|w| w[1].time > w[0].time));
        assert_eq!(run.log.rows.len(), 21);
    }

    #[test]
    fn violation_amount() {
        let lo = Vector::from_column_slice(&[-1.0, 0.0]);
        let hi = Vector::from_column_slice(&[1.0, 2.0]);
        assert_eq!(input_violation(&Vector::from_column_slice(&[0.0, 1.0]), &lo, &hi), 0.0);
        assert_eq!(input_violation(&Vector::from_column_slice(&[1.5, -0.25]), &lo, &hi), 0.5);
    }
}
