//! TOML configuration for closed-loop runs.
//!
//! ```toml
//! seed = 7
//!
//! [scenario.uav]            # or [scenario.double_integrator]
//! obstacle_center = [0.0, 100.0, 100.0]
//! ...
//!
//! [evading]                 # optional; normalized from samples when absent
//! epsilon = 1e-3
//! k = [0.05, 0.05, 0.05]
//! k1 = [1.0, 20.0]
//! k2 = [0.4, 13.3]
//! k3 = [0.05, 1.0]
//!
//! [zcbf]
//! horizon = 15.0
//! step = 0.01
//! dwell = 1.0
//!
//! [filter]
//! r1 = [1.0, 1.0, 1.0]      # diagonal weights
//! r2 = [0.1, 0.1, 0.1]
//! alpha = 1.0
//!
//! [sim]
//! duration = 70.0
//! step = 0.01
//! period = 0.05
//! mode = "proposed"         # proposed | baseline | nominal-only
//!
//! [output]
//! log = "run.csv"
//! diagnostics = false
//! timing = true
//! ```
//!
//! Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evading::EvadingConfig;
use crate::filter::{FilterConfig, SafetyFilter};
use crate::model::{BoxBounds, ConstraintSet, SystemModel};
use crate::models::{DoubleIntegrator, LinearRd2};
use crate::sim::NominalController;
use crate::uav::UavScenario;
use crate::zcbf::ZcbfConfig;
use crate::{Error, Matrix, Result, Vector};

/// Samples used to normalize evading gains when `[evading]` is absent.
pub const GAIN_SAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One-step filter with velocity boxes and the boxed evading maneuver.
    #[default]
    Proposed,
    /// Position-only filter with the free evading maneuver on every channel.
    Baseline,
    /// The nominal controller alone.
    NominalOnly,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Proposed => "proposed",
            Mode::Baseline => "baseline",
            Mode::NominalOnly => "nominal-only",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "proposed" => Ok(Mode::Proposed),
            "baseline" => Ok(Mode::Baseline),
            "nominal-only" => Ok(Mode::NominalOnly),
            other => Err(format!("unknown mode '{other}' (expected proposed, baseline or nominal-only)")),
        }
    }
}

/// A double integrator driven toward a target behind a wall at `r = wall`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleIntegratorScenario {
    pub wall: f64,
    /// Velocity box; omit for an unboxed channel.
    #[serde(default)]
    pub velocity_bounds: Option<[f64; 2]>,
    pub input_bounds: [f64; 2],
    pub target: f64,
    #[serde(default = "default_kp")]
    pub kp: f64,
    #[serde(default = "default_kd")]
    pub kd: f64,
    pub initial_state: [f64; 2],
}

fn default_kp() -> f64 {
    1.0
}

fn default_kd() -> f64 {
    1.5
}

impl DoubleIntegratorScenario {
    fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("scenario.double_integrator.{field}"), msg));
        if let Some([lo, hi]) = self.velocity_bounds {
            if !(lo < hi) {
                return bad("velocity_bounds", "minimum must be below maximum");
            }
        }
        if !(self.input_bounds[0] < self.input_bounds[1]) {
            return bad("input_bounds", "minimum must be below maximum");
        }
        if !(self.kp >= 0.0 && self.kd >= 0.0) {
            return bad("kp", "gains must be non-negative");
        }
        Ok(())
    }
}

struct PdController {
    target: f64,
    kp: f64,
    kd: f64,
    bounds: [f64; 2],
}

impl NominalController for PdController {
    fn control(&mut self, x: &Vector, _t: f64) -> Result<Vector> {
        let u = self.kp * (self.target - x[0]) - self.kd * x[1];
        Ok(Vector::from_element(1, u.clamp(self.bounds[0], self.bounds[1])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSection {
    Uav(UavScenario),
    DoubleIntegrator(DoubleIntegratorScenario),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    /// Diagonal of `R1`; identity when absent.
    pub r1: Option<Vec<f64>>,
    /// Diagonal of `R2`; `0.1 I` when absent. Ignored by the baseline.
    pub r2: Option<Vec<f64>>,
    pub alpha: f64,
    pub rd1_shrink: f64,
    pub feasibility_tol: f64,
    pub membership_tol: f64,
    pub solver_enabled: bool,
}

impl Default for FilterSection {
    fn default() -> Self {
        let d = FilterConfig::with_defaults(0);
        Self {
            r1: None,
            r2: None,
            alpha: d.alpha_gain,
            rd1_shrink: d.rd1_shrink,
            feasibility_tol: d.feasibility_tol,
            membership_tol: d.membership_tol,
            solver_enabled: true,
        }
    }
}

impl FilterSection {
    pub fn to_config(&self, m: usize, dt: f64) -> Result<FilterConfig> {
        let defaults = FilterConfig::with_defaults(m);
        let diag = |name: &str, w: &Option<Vec<f64>>, fallback: Matrix| -> Result<Matrix> {
            match w {
                None => Ok(fallback),
                Some(w) if w.len() == m => Ok(Matrix::from_diagonal(&Vector::from_column_slice(w))),
                Some(w) => Err(Error::config(
                    format!("filter.{name}"),
                    format!("expected {m} diagonal entries, got {}", w.len()),
                )),
            }
        };
        let config = FilterConfig {
            r1: diag("r1", &self.r1, defaults.r1)?,
            r2: diag("r2", &self.r2, defaults.r2)?,
            alpha_gain: self.alpha,
            dt,
            feasibility_tol: self.feasibility_tol,
            membership_tol: self.membership_tol,
            rd1_shrink: self.rd1_shrink,
            solver_enabled: self.solver_enabled,
        };
        config.validate(m)?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub duration: f64,
    /// Plant integration step.
    pub step: f64,
    /// Controller period (zero-order hold).
    pub period: f64,
    pub mode: Mode,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            duration: 70.0,
            step: 0.01,
            period: 0.05,
            mode: Mode::Proposed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub log: Option<PathBuf>,
    /// Adds barrier margin, membership and rollout flags to every row.
    pub diagnostics: bool,
    /// Records wall-clock solve times; disable for byte-identical logs.
    pub timing: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            log: None,
            diagnostics: false,
            timing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub evading: Option<EvadingConfig>,
    #[serde(default)]
    pub zcbf: ZcbfConfig,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl FromStr for SimConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let config: SimConfig = toml::from_str(s).map_err(|e| Error::InvalidConfig {
            field: "toml".into(),
            message: e.message().trim().to_string() + &span_note(s, e.span()),
        })?;
        config.validate()?;
        Ok(config)
    }
}

fn span_note(src: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = src[..r.start.min(src.len())].lines().count().max(1);
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

impl SimConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig {
            field: path.display().to_string(),
            message: e.to_string(),
        })?;
        text.parse()
    }

    /// The UAV scenario with every section at its default.
    pub fn uav_default() -> Self {
        Self {
            seed: 0,
            scenario: ScenarioSection::Uav(UavScenario::default()),
            evading: None,
            zcbf: ZcbfConfig::default(),
            filter: FilterSection::default(),
            sim: SimSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.scenario {
            ScenarioSection::Uav(s) => s.validate()?,
            ScenarioSection::DoubleIntegrator(s) => s.validate()?,
        }
        self.zcbf.validate()?;
        let s = &self.sim;
        if !(s.duration > 0.0 && s.duration.is_finite()) {
            return Err(Error::config("sim.duration", "must be positive"));
        }
        if !(s.step > 0.0) {
            return Err(Error::config("sim.step", "must be positive"));
        }
        if !(s.period >= s.step) {
            return Err(Error::config("sim.period", "must be at least the plant step"));
        }
        let ratio = s.period / s.step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::config("sim.period", "must be a whole multiple of the plant step"));
        }
        Ok(())
    }

    /// Number of log rows: one per controller period plus the initial one.
    pub fn row_count(&self) -> usize {
        (self.sim.duration / self.sim.period + 1e-9).floor() as usize + 1
    }

    pub fn substeps(&self) -> usize {
        (self.sim.period / self.sim.step).round() as usize
    }

    pub fn build(&self) -> Result<Scenario> {
        self.validate()?;
        let mut scenario = match &self.scenario {
            ScenarioSection::Uav(s) => uav_scenario(s)?,
            ScenarioSection::DoubleIntegrator(s) => double_integrator_scenario(s)?,
        };
        let m = scenario.model.rd1_dim();
        let evading = match &self.evading {
            Some(e) => e.clone(),
            None => {
                let samples = sample_states(&scenario.sample_region, GAIN_SAMPLES, self.seed);
                EvadingConfig::from_samples(scenario.model.as_ref(), &scenario.constraints, &samples)?
            }
        };
        evading.validate(m, scenario.constraints.boxed_count())?;
        scenario.evading = evading;
        scenario.zcbf = self.zcbf.clone();
        scenario.filter = self.filter.to_config(m, self.sim.period)?;
        Ok(scenario)
    }
}

/// `count` states drawn uniformly from `region` with a seeded generator.
pub fn sample_states(region: &BoxBounds, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            Vector::from_fn(region.len(), |i, _| {
                rng.random_range(region.lower()[i]..=region.upper()[i])
            })
        })
        .collect()
}

/// A fully wired closed-loop setup.
pub struct Scenario {
    pub model: Arc<dyn SystemModel>,
    pub constraints: ConstraintSet,
    pub evading: EvadingConfig,
    pub zcbf: ZcbfConfig,
    pub filter: FilterConfig,
    pub nominal: Box<dyn NominalController>,
    pub initial_state: Vector,
    pub state_names: Vec<String>,
    pub input_names: Vec<String>,
    /// Region sampled by audits and gain normalization.
    pub sample_region: BoxBounds,
    /// Signed distance to the obstacle surface (negative means collision).
    pub distance: Box<dyn Fn(&Vector) -> f64 + Send + Sync>,
}

impl Scenario {
    pub fn proposed_filter(&self) -> Result<SafetyFilter> {
        SafetyFilter::new(
            self.model.clone(),
            self.constraints.clone(),
            self.evading.clone(),
            self.zcbf.clone(),
            self.filter.clone(),
        )
    }

    pub fn baseline_filter(&self) -> Result<SafetyFilter> {
        SafetyFilter::baseline(
            self.model.clone(),
            &self.constraints,
            &self.evading,
            self.zcbf.clone(),
            self.filter.clone(),
        )
    }
}

fn placeholder_evading() -> EvadingConfig {
    EvadingConfig {
        epsilon: 1.0,
        k: Vec::new(),
        k1: Vec::new(),
        k2: Vec::new(),
        k3: Vec::new(),
    }
}

fn uav_scenario(s: &UavScenario) -> Result<Scenario> {
    let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    let geometry = s.clone();
    Ok(Scenario {
        model: Arc::new(s.model()),
        constraints: s.constraints()?,
        evading: placeholder_evading(),
        zcbf: ZcbfConfig::default(),
        filter: FilterConfig::with_defaults(3),
        nominal: Box::new(s.tracker()),
        initial_state: s.initial_state(),
        state_names: names(&["px", "py", "pz", "V", "gamma", "psi"]),
        input_names: names(&["V", "gamma", "psi"]),
        sample_region: s.sample_region(),
        distance: Box::new(move |x| geometry.obstacle_distance(x)),
    })
}

fn double_integrator_scenario(s: &DoubleIntegratorScenario) -> Result<Scenario> {
    let rd1 = match s.velocity_bounds {
        Some([lo, hi]) => BoxBounds::from_slices(&[lo], &[hi])?,
        None => BoxBounds::empty(),
    };
    let constraints = ConstraintSet::new(
        Arc::new(LinearRd2::new(vec![1.0], s.wall)),
        rd1,
        BoxBounds::from_slices(&[s.input_bounds[0]], &[s.input_bounds[1]])?,
    )?;
    let [v_lo, v_hi] = s.velocity_bounds.unwrap_or([-5.0, 5.0]);
    let wall = s.wall;
    Ok(Scenario {
        model: Arc::new(DoubleIntegrator::new(1)),
        constraints,
        evading: placeholder_evading(),
        zcbf: ZcbfConfig::default(),
        filter: FilterConfig::with_defaults(1),
        nominal: Box::new(PdController {
            target: s.target,
            kp: s.kp,
            kd: s.kd,
            bounds: s.input_bounds,
        }),
        initial_state: Vector::from_column_slice(&s.initial_state),
        state_names: vec!["r".into(), "v".into()],
        input_names: vec!["a".into()],
        sample_region: BoxBounds::from_slices(&[wall - 10.0, v_lo], &[wall, v_hi])?,
        distance: Box::new(move |x| wall - x[0]),
    })
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

        [sim]
        duration = 5.0
    "#;

    #[test]
    fn parses_double_integrator() {
        let c: SimConfig = DI.parse().unwrap();
        assert_eq!(c.sim.mode, Mode::Proposed);
        assert_eq!(c.row_count(), 101);
        assert_eq!(c.substeps(), 5);
        let s = c.build().unwrap();
        assert_eq!(s.constraints.boxed_count(), 1);
        assert_eq!(s.filter.dt, 0.05);
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = DI.replace("target = 3.0", "target = 3.0\ntargte = 1.0");
        let err = text.parse::<SimConfig>().unwrap_err();
        assert!(matches!(err, Error::InvalidConfig { .. }), "{err}");
        assert!(err.to_string().contains("targte"), "{err}");
    }

    #[test]
    fn rejects_bad_periods() {
        let text = DI.replace("duration = 5.0", "duration = 5.0\nperiod = 0.005");
        assert!(text.parse::<SimConfig>().is_err());
        let text = DI.replace("duration = 5.0", "duration = 5.0\nperiod = 0.025");
        assert!(text.parse::<SimConfig>().is_err());
        let text = DI.replace("duration = 5.0", "duration = -1.0");
        assert!(text.parse::<SimConfig>().is_err());
    }

    #[test]
    fn rejects_wrong_weight_length() {
        let text = format!("{DI}\n[filter]\nr1 = [1.0, 2.0]\n");
        let c: SimConfig = text.parse().unwrap();
        assert!(c.build().is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [Mode::Proposed, Mode::Baseline, Mode::NominalOnly] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
        assert!("fast".parse::<Mode>().is_err());
    }

    #[test]
    fn samples_are_seeded() {
        let b = BoxBounds::from_slices(&[0.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(sample_states(&b, 5, 3), sample_states(&b, 5, 3));
        assert_ne!(sample_states(&b, 5, 3), sample_states(&b, 5, 4));
        assert!(sample_states(&b, 100, 1).iter().all(|x| b.contains(x, 0.0)));
    }
}
