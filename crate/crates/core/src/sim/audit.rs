//! Sampling check of the control-authority assumptions over a scenario box.

use std::fmt;

use crate::model::{ConstraintSet, SystemModel};
use crate::sim::config::{sample_states, Scenario};
use crate::{Vector, model::SINGULARITY_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub samples: usize,
    pub epsilon: f64,
    /// Per channel, the smallest value seen.
    pub min_abs_g: Vec<f64>,
    pub min_mu: Vec<f64>,
    pub min_nu: Vec<f64>,
    /// `4 mu nu - epsilon`.
    pub min_eps_margin: Vec<f64>,
    /// Samples at which the model itself refused to evaluate.
    pub domain_errors: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        let positive = |v: &[f64]| v.iter().all(|x| *x > 0.0);
        self.domain_errors == 0
            && self.min_abs_g.iter().all(|g| *g >= SINGULARITY_TOL)
            && positive(&self.min_mu)
            && positive(&self.min_nu)
            && positive(&self.min_eps_margin)
    }

    /// Names of the checks that failed.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.min_abs_g.len() {
            if self.min_abs_g[i] < SINGULARITY_TOL {
                out.push(format!("g_v[{i}] singular"));
            }
            if self.min_mu[i] <= 0.0 || self.min_nu[i] <= 0.0 {
                out.push(format!("mu/nu[{i}] not positive"));
            }
            if self.min_eps_margin[i] <= 0.0 {
                out.push(format!("epsilon invalid on channel {i}"));
            }
        }
        if self.domain_errors > 0 {
            out.push(format!("{} samples outside the model domain", self.domain_errors));
        }
        out
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples  {}", self.samples)?;
        writeln!(f, "epsilon  {:e}", self.epsilon)?;
        writeln!(f, "{:<8} {:>14} {:>14} {:>14} {:>14}", "channel", "min|g|", "min mu", "min nu", "min 4mu*nu-eps")?;
        for i in 0..self.min_abs_g.len() {
            writeln!(
                f,
                "{:<8} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}",
                i, self.min_abs_g[i], self.min_mu[i], self.min_nu[i], self.min_eps_margin[i]
            )?;
        }
        if self.domain_errors > 0 {
            writeln!(f, "domain errors  {}", self.domain_errors)?;
        }
        write!(f, "result   {}", if self.passed() { "pass" } else { "FAIL" })
    }
}

pub fn audit_states(
    model: &dyn SystemModel,
    constraints: &ConstraintSet,
    epsilon: f64,
    states: &[Vector],
) -> AuditReport {
    let m = model.rd1_dim();
    let mut report = AuditReport {
        samples: states.len(),
        epsilon,
        min_abs_g: vec![f64::INFINITY; m],
        min_mu: vec![f64::INFINITY; m],
        min_nu: vec![f64::INFINITY; m],
        min_eps_margin: vec![f64::INFINITY; m],
        domain_errors: 0,
    };
    let input = constraints.input();
    for x in states {
        let (Ok(g), Ok(fv)) = (model.g_diag(x), model.f_v(x)) else {
            report.domain_errors += 1;
            continue;
        };
        for i in 0..m {
            report.min_abs_g[i] = report.min_abs_g[i].min(g[i].abs());
            let ratio = fv[i] / g[i];
            let mu = -input.lower()[i] - ratio;
            let nu = input.upper()[i] + ratio;
            report.min_mu[i] = report.min_mu[i].min(mu);
            report.min_nu[i] = report.min_nu[i].min(nu);
            report.min_eps_margin[i] = report.min_eps_margin[i].min(4.0 * mu * nu - epsilon);
        }
    }
    report
}

/// Audits `samples` states drawn uniformly from the scenario's region.
pub fn audit_assumptions(scenario: &Scenario, samples: usize, seed: u64) -> AuditReport {
    let states = sample_states(&scenario.sample_region, samples.max(1), seed);
    audit_states(scenario.model.as_ref(), &scenario.constraints, scenario.evading.epsilon, &states)
}
