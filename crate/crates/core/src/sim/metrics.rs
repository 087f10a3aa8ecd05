//! Summary statistics of a run log.

use std::fmt;

use crate::sim::log::SimLog;

/// Slack below which a velocity-box value counts as inside.
pub const RD1_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub rows: usize,
    pub duration: f64,
    /// Smallest distance to the obstacle surface over the run.
    pub min_distance: f64,
    /// Rows with some `h_{v_i} > RD1_TOL`.
    pub rd1_violations: usize,
    /// Largest `h_{v_i}` seen (0 when always inside).
    pub rd1_max_violation: f64,
    pub input_violations: usize,
    pub input_max_violation: f64,
    pub fallback_count: usize,
    pub best_effort_count: usize,
    /// Solve-time statistics in seconds over all rows.
    pub solve_mean: f64,
    pub solve_std: f64,
    pub solve_max: f64,
    /// `sum_t |u_t - u_{t-1}|`.
    pub chattering: f64,
}

impl Metrics {
    /// Returns `None` for a log without rows.
    pub fn from_log(log: &SimLog) -> Option<Self> {
        let rows = &log.rows;
        let first = rows.first()?;
        let last = rows.last()?;
        let mut m = Metrics {
            rows: rows.len(),
            duration: last.time - first.time,
            min_distance: f64::INFINITY,
            rd1_violations: 0,
            rd1_max_violation: 0.0,
            input_violations: 0,
            input_max_violation: 0.0,
            fallback_count: 0,
            best_effort_count: 0,
            solve_mean: 0.0,
            solve_std: 0.0,
            solve_max: 0.0,
            chattering: 0.0,
        };
        for (k, row) in rows.iter().enumerate() {
            m.min_distance = m.min_distance.min(row.distance);
            let worst = row.rd1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if worst > RD1_TOL {
                m.rd1_violations += 1;
                m.rd1_max_violation = m.rd1_max_violation.max(worst);
            }
            if row.input_violation > 0.0 {
                m.input_violations += 1;
                m.input_max_violation = m.input_max_violation.max(row.input_violation);
            }
            m.fallback_count += row.fallback as usize;
            m.best_effort_count += row.best_effort as usize;
            m.solve_mean += row.solve_time;
            m.solve_max = m.solve_max.max(row.solve_time);
            if k > 0 {
                let prev = &rows[k - 1].input;
                m.chattering += row.input.iter().zip(prev).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            }
        }
        let n = rows.len() as f64;
        m.solve_mean /= n;
        m.solve_std = (rows.iter().map(|r| (r.solve_time - m.solve_mean).powi(2)).sum::<f64>() / n).sqrt();
        Some(m)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("rows", self.rows.to_string()),
            ("duration_s", format!("{:.3}", self.duration)),
            ("min_distance_m", format!("{:.6}", self.min_distance)),
            ("rd1_violation_rows", self.rd1_violations.to_string()),
            ("rd1_max_violation", format!("{:.6e}", self.rd1_max_violation)),
            ("input_violation_rows", self.input_violations.to_string()),
            ("input_max_violation", format!("{:.6e}", self.input_max_violation)),
            ("fallback_steps", self.fallback_count.to_string()),
            ("best_effort_steps", self.best_effort_count.to_string()),
            ("solve_mean_ms", format!("{:.4}", self.solve_mean * 1e3)),
            ("solve_std_ms", format!("{:.4}", self.solve_std * 1e3)),
            ("solve_max_ms", format!("{:.4}", self.solve_max * 1e3)),
            ("chattering", format!("{:.6}", self.chattering)),
        ]
    }

    /// One `key=value` line per metric.
    pub fn key_values(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let entries = self.entries();
        let width = entries.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in entries {
            writeln!(f, "{k:<width$}  {v:>16}")?;
        }
        Ok(())
    }
}
