//! Fixtures shared by the benchmarks: the default UAV scenario and states
//! taken from its proposed closed-loop run, where the filter does real work.

use evasafe::sim::{run_sim, Scenario, SimConfig};
use evasafe::Vector;

pub struct Fixture {
    pub scenario: Scenario,
    /// `(x, u_hat, u_prev)` triples in visiting order.
    pub steps: Vec<(Vector, Vector, Vector)>,
}

/// Simulates `duration` seconds of the default scenario and keeps every
/// `stride`-th controller step.
pub fn uav_fixture(duration: f64, stride: usize) -> Fixture {
    let mut config = SimConfig::uav_default();
    config.sim.duration = duration;
    config.output.timing = false;
    let log = run_sim(&config).expect("default scenario runs").log;
    let steps = log
        .rows
        .windows(2)
        .step_by(stride.max(1))
        .map(|w| {
            (
                Vector::from_column_slice(&w[1].state),
                Vector::from_column_slice(&w[1].nominal),
                Vector::from_column_slice(&w[0].input),
            )
        })
        .collect();
    Fixture {
        scenario: config.build().expect("default scenario builds"),
        steps,
    }
}
