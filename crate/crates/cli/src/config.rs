//! Scenario configuration files.
//!
//! A config is a JSON object that names a scenario and overrides any subset
//! of that scenario's defaults. Parsing merges the user object over the
//! defaults, deserializes the result strictly (unknown keys are errors) and
//! then runs every parameter through the core validators.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use hand_core::cost::{corpus, make_log_cosh};
use hand_core::dynamics::OdeParams;
use hand_core::{
    make_quadratic, CostFunction, DisturbanceSpec, Error as CoreError, HandKind, HandParams,
    Integrator, SolverConfig, TableauId,
};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioId {
    Instability,
    UniformityProbe,
    #[serde(rename = "hand1-rate")]
    Hand1Rate,
    #[serde(rename = "hand2-rate")]
    Hand2Rate,
    RestartSweep,
    DiscretizationOrder,
    RobustnessMargin,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 7] = [
        ScenarioId::Instability,
        ScenarioId::UniformityProbe,
        ScenarioId::Hand1Rate,
        ScenarioId::Hand2Rate,
        ScenarioId::RestartSweep,
        ScenarioId::DiscretizationOrder,
        ScenarioId::RobustnessMargin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::Instability => "instability",
            ScenarioId::UniformityProbe => "uniformity-probe",
            ScenarioId::Hand1Rate => "hand1-rate",
            ScenarioId::Hand2Rate => "hand2-rate",
            ScenarioId::RestartSweep => "restart-sweep",
            ScenarioId::DiscretizationOrder => "discretization-order",
            ScenarioId::RobustnessMargin => "robustness-margin",
        }
    }

    /// Hybrid systems the scenario can run.
    fn allowed_hands(self) -> &'static [HandKind] {
        match self {
            ScenarioId::UniformityProbe | ScenarioId::Hand1Rate => &[HandKind::Hand1],
            ScenarioId::RobustnessMargin => &[HandKind::Hand1, HandKind::Hand2],
            _ => &[HandKind::Hand2],
        }
    }

    fn uses_disturbance(self) -> bool {
        matches!(
            self,
            ScenarioId::Instability | ScenarioId::Hand1Rate | ScenarioId::Hand2Rate
        )
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cost function selector. Bundled functions are named by `kind`; arbitrary
/// quadratics `x'Qx/2 + b'x` are given inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostSelector {
    Example1 {
        p: f64,
    },
    HalfSquare {
        dim: usize,
    },
    #[serde(rename = "diag_1_4")]
    Diag14 {},
    Coupled3 {},
    LogCosh2 {},
    LogCosh {
        center: Vec<f64>,
        mu: f64,
    },
    Quadratic {
        q: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
}

impl CostSelector {
    pub fn build(&self) -> Result<CostFunction, CoreError> {
        let f = match self {
            CostSelector::Example1 { p } => {
                if !(*p > 0.0 && p.is_finite()) {
                    return Err(CoreError::InvalidParameter {
                        name: "p",
                        reason: format!("must be > 0, got {p}"),
                    });
                }
                corpus::example1(*p)
            }
            CostSelector::HalfSquare { dim } => {
                if *dim == 0 {
                    return Err(CoreError::InvalidParameter {
                        name: "dim",
                        reason: "must be >= 1".into(),
                    });
                }
                corpus::half_square(*dim)
            }
            CostSelector::Diag14 {} => corpus::diag_1_4(),
            CostSelector::Coupled3 {} => corpus::coupled3(),
            CostSelector::LogCosh2 {} => corpus::log_cosh2(),
            CostSelector::LogCosh { center, mu } => make_log_cosh(center.clone(), *mu)?,
            CostSelector::Quadratic { q, b } => make_quadratic(q, b)?.with_label("quadratic"),
        };
        f.validate()?;
        Ok(f)
    }

    pub fn quadratic_corpus() -> Vec<CostSelector> {
        vec![
            CostSelector::Example1 { p: 2.0 },
            CostSelector::HalfSquare { dim: 1 },
            CostSelector::Diag14 {},
            CostSelector::Coupled3 {},
        ]
    }

    pub fn bundled_corpus() -> Vec<CostSelector> {
        let mut v = Self::quadratic_corpus();
        v.push(CostSelector::LogCosh2 {});
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    None,
    SquareWave,
    Sinusoid,
    UniformRandom,
}

/// Disturbance added to the right-hand side of the `x2` equation. Square and
/// sine waves act along the all-ones direction of `x2`; the random signal is
/// uniform in the full-state ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    pub shape: Shape,
    pub amplitude: f64,
    /// Period of the square and sine waves (seconds).
    pub period: f64,
    /// Hold interval of the random signal (seconds).
    pub hold: f64,
}

impl DisturbanceConfig {
    pub fn none() -> Self {
        Self {
            shape: Shape::None,
            amplitude: 0.0,
            period: 1.0,
            hold: 0.1,
        }
    }

    /// Builds the signal for a flat state `[x1, x2, tau]` of dimension `n`.
    /// `None` when the shape is `none`.
    pub fn build(&self, n: usize, seed: u64) -> Result<Option<DisturbanceSpec>, CoreError> {
        let len = 2 * n + 1;
        let axis: Vec<f64> = (0..len)
            .map(|i| if (n..2 * n).contains(&i) { 1.0 } else { 0.0 })
            .collect();
        let spec = match self.shape {
            Shape::None => return Ok(None),
            Shape::SquareWave => DisturbanceSpec::square_wave(self.amplitude, self.period, &axis)?,
            Shape::Sinusoid => DisturbanceSpec::sinusoid(self.amplitude, self.period, &axis)?,
            Shape::UniformRandom => {
                DisturbanceSpec::uniform_random(self.amplitude, seed, self.hold, len)?
            }
        };
        Ok(Some(spec))
    }
}

/// Log-spaced restart grid `[lo_factor ΔT*, hi_factor ΔT*]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestartGrid {
    pub lo_factor: f64,
    pub hi_factor: f64,
    pub count: usize,
}

impl RestartGrid {
    pub fn points(&self, center: f64) -> Vec<f64> {
        let (a, b) = (
            (self.lo_factor * center).ln(),
            (self.hi_factor * center).ln(),
        );
        if self.count == 1 {
            return vec![a.exp()];
        }
        (0..self.count)
            .map(|k| (a + (b - a) * k as f64 / (self.count - 1) as f64).exp())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginConfig {
    /// Bisection bracket for the disturbance amplitude.
    pub lo: f64,
    pub hi: f64,
    pub iters: usize,
    pub hold: f64,
    /// Settled runs must stay within this distance of the target set.
    pub radius: f64,
    pub step_sizes: Vec<f64>,
}

/// Scenario knobs and check thresholds. Each scenario reads the fields it
/// needs and ignores the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    /// Sub-optimality threshold for time-to-epsilon.
    pub eps: f64,
    /// A nominal run diverges if `|x1 - x*|` grows by this factor.
    pub growth_factor: f64,
    /// Late-time bound on the HAND target distance.
    pub distance_threshold: f64,
    /// Start of the "late" window (seconds).
    pub settle_time: f64,
    pub t0_values: Vec<f64>,
    pub phases: Vec<f64>,
    pub ratio_limit: f64,
    pub horizon_scale: f64,
    pub horizon_offset: f64,
    pub hand_horizon: f64,
    pub limit_points: Vec<f64>,
    pub limit_window: f64,
    /// Last limiting integral must be at most `limit_factor * ell`.
    pub limit_factor: f64,
    pub restart_grid: RestartGrid,
    pub estimate_factor: f64,
    pub step_sizes: Vec<f64>,
    pub ref_divisor: u32,
    pub euler_order_tol: f64,
    pub rk4_order_tol: f64,
    /// Monotonicity slack, stationarity radius and rate tolerance are
    /// `slack_factor * L * h` (the rate tolerance adds `1e-6`).
    pub slack_factor: f64,
    pub contraction_slack: f64,
    /// Periods starting with `f~ <= gap_floor * max(1, |f*|)` are left out of
    /// the contraction check.
    pub gap_floor: f64,
    pub identity_tol: f64,
    pub margin: MarginConfig,
}

impl Default for Experiment {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            growth_factor: 100.0,
            distance_threshold: 0.1,
            settle_time: 50.0,
            t0_values: vec![1.0, 10.0, 100.0, 1000.0],
            phases: vec![1.0, 1.25, 1.5, 1.75, 2.0],
            ratio_limit: 1.5,
            horizon_scale: 5.0,
            horizon_offset: 50.0,
            hand_horizon: 100.0,
            limit_points: vec![10.0, 100.0, 1000.0, 10000.0],
            limit_window: 1.0,
            limit_factor: 3e-4,
            restart_grid: RestartGrid {
                lo_factor: 0.5,
                hi_factor: 2.0,
                count: 15,
            },
            estimate_factor: 2.0,
            step_sizes: (6..=10).map(|k| 2f64.powi(-k)).collect(),
            ref_divisor: 128,
            euler_order_tol: 0.2,
            rk4_order_tol: 0.8,
            slack_factor: 10.0,
            contraction_slack: 1e-3,
            gap_floor: 1e-10,
            identity_tol: 1e-12,
            margin: MarginConfig {
                lo: 1e-6,
                hi: 1.0,
                iters: 20,
                hold: 0.1,
                radius: 0.1,
                step_sizes: vec![1e-2, 5e-3],
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scenario: ScenarioId,
    pub costs: Vec<CostSelector>,
    /// Runs start at `x* + x_offset * (1, ..., 1)`.
    pub x_offset: f64,
    /// Nominal ODE parameters.
    pub ode: OdeParams,
    pub hand_kind: HandKind,
    pub hand: HandParams,
    pub solver: SolverConfig,
    pub disturbance: DisturbanceConfig,
    pub seed: u64,
    pub output: PathBuf,
    pub experiment: Experiment,
}

impl ScenarioSpec {
    pub fn defaults(id: ScenarioId) -> Self {
        let e = std::f64::consts::E;
        let rk4 = Integrator::RungeKutta(TableauId::Rk4);
        let mut spec = Self {
            scenario: id,
            costs: vec![CostSelector::HalfSquare { dim: 1 }],
            x_offset: 1.0,
            ode: OdeParams {
                p: 2.0,
                c: 0.25,
                ell: 3.0,
                t0: 1.0,
            },
            hand_kind: HandKind::Hand2,
            hand: HandParams::hand2(1.0, 2.0, 1.0),
            solver: SolverConfig::new(1e-3, 100.0).with_stride(10),
            disturbance: DisturbanceConfig::none(),
            seed: 0,
            output: PathBuf::from("out").join(id.as_str()),
            experiment: Experiment::default(),
        };
        match id {
            ScenarioId::Instability => {
                spec.costs = vec![CostSelector::Example1 { p: 2.0 }];
                spec.hand = HandParams::hand2(1.0, 2.0 * e, 0.25);
                spec.solver = SolverConfig::new(1e-2, 2e5)
                    .with_integrator(Integrator::Euler)
                    .with_stride(1000);
                spec.disturbance = DisturbanceConfig {
                    shape: Shape::SquareWave,
                    amplitude: 1e-3,
                    period: 1e4,
                    hold: 0.1,
                };
            }
            ScenarioId::UniformityProbe => {
                spec.costs = vec![CostSelector::Example1 { p: 2.0 }];
                spec.ode.c = 1.0;
                spec.hand_kind = HandKind::Hand1;
                spec.hand = HandParams::hand1(1.0, 2.0, 2.0, 1.0);
                spec.solver = SolverConfig::new(1e-2, 100.0)
                    .with_integrator(rk4)
                    .with_stride(10);
                spec.experiment.eps = 1e-2;
            }
            ScenarioId::Hand1Rate => {
                spec.costs = CostSelector::quadratic_corpus();
                spec.hand_kind = HandKind::Hand1;
                spec.hand = HandParams::hand1(1.0, 50.0, 50.0, 1.0);
                spec.solver = SolverConfig::new(1e-3, 60.0).with_stride(10);
            }
            ScenarioId::Hand2Rate => {
                spec.x_offset = 5.0;
            }
            ScenarioId::RestartSweep => {
                spec.x_offset = 5.0;
                spec.hand = HandParams::hand2(
                    0.1,
                    0.1 + hand_core::analysis::optimal_restart(1.0, 1.0, 0.1),
                    1.0,
                );
            }
            ScenarioId::DiscretizationOrder => {
                spec.x_offset = 5.0;
                spec.solver = SolverConfig::new(2f64.powi(-6), 100.0).with_stride(16);
            }
            ScenarioId::RobustnessMargin => {
                spec.hand = HandParams::hand2(1.0, 2.0 * e, 1.0);
                spec.solver = SolverConfig::new(1e-2, 100.0).with_stride(10);
                spec.seed = 7;
            }
        }
        spec
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    /// Runs every parameter through its owning validator. Errors name the
    /// offending key path.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let core = |prefix: &str, e: CoreError| -> (String, String) {
            match e {
                CoreError::InvalidParameter { name, reason } => {
                    (format!("{prefix}.{name}"), reason)
                }
                other => (prefix.to_string(), other.to_string()),
            }
        };
        let key = |k: &str, msg: String| (k.to_string(), msg);

        if self.costs.is_empty() {
            return Err(key("costs", "at least one cost is required".into()));
        }
        for (i, c) in self.costs.iter().enumerate() {
            let f = c.build().map_err(|e| core(&format!("costs.{i}"), e))?;
            f.require_xstar()
                .and_then(|_| f.require_mu())
                .and_then(|_| f.require_lipschitz())
                .map_err(|e| (format!("costs.{i}"), e.to_string()))?;
        }
        if !self.x_offset.is_finite() {
            return Err(key("x_offset", "must be finite".into()));
        }
        self.ode.validate().map_err(|e| core("ode", e))?;
        if !self.scenario.allowed_hands().contains(&self.hand_kind) {
            return Err(key(
                "hand_kind",
                format!(
                    "scenario {} does not run {}",
                    self.scenario,
                    self.hand_kind.label()
                ),
            ));
        }
        self.hand
            .validate(self.hand_kind)
            .map_err(|e| core("hand", e))?;
        self.solver.validate().map_err(|e| core("solver", e))?;

        if self.disturbance.shape != Shape::None {
            if !self.scenario.uses_disturbance() {
                return Err(key(
                    "disturbance.shape",
                    format!("scenario {} does not take a disturbance", self.scenario),
                ));
            }
            self.disturbance
                .build(1, self.seed)
                .map_err(|e| core("disturbance", e))?;
        }
        self.validate_experiment()
    }

    fn validate_experiment(&self) -> Result<(), (String, String)> {
        let x = &self.experiment;
        let bad = |k: &str, msg: &str| Err((format!("experiment.{k}"), msg.to_string()));
        let pos = |v: f64| v > 0.0 && v.is_finite();
        let scalars = [
            ("eps", x.eps),
            ("growth_factor", x.growth_factor),
            ("distance_threshold", x.distance_threshold),
            ("ratio_limit", x.ratio_limit),
            ("limit_window", x.limit_window),
            ("limit_factor", x.limit_factor),
            ("estimate_factor", x.estimate_factor),
            ("hand_horizon", x.hand_horizon),
            ("euler_order_tol", x.euler_order_tol),
            ("rk4_order_tol", x.rk4_order_tol),
        ];
        for (k, v) in scalars {
            if !pos(v) {
                return bad(k, &format!("must be > 0, got {v}"));
            }
        }
        let nonneg = [
            ("settle_time", x.settle_time),
            ("horizon_scale", x.horizon_scale),
            ("horizon_offset", x.horizon_offset),
            ("slack_factor", x.slack_factor),
            ("contraction_slack", x.contraction_slack),
            ("gap_floor", x.gap_floor),
            ("identity_tol", x.identity_tol),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(k, &format!("must be >= 0, got {v}"));
            }
        }
        if x.t0_values.is_empty() || !x.t0_values.iter().all(|&v| pos(v)) {
            return bad("t0_values", "needs at least one positive initial time");
        }
        if x.t0_values
            .windows(2)
            .any(|w| w[0] >= w[1] || w[0].is_nan() || w[1].is_nan())
        {
            return bad("t0_values", "initial times must be strictly increasing");
        }
        if x.phases.is_empty() {
            return bad("phases", "needs at least one clock phase");
        }
        if self.scenario == ScenarioId::UniformityProbe {
            let (lo, hi) = (self.hand.t_min, self.hand.t_max);
            if let Some(p) = x.phases.iter().find(|&&p| !(p >= lo && p <= hi)) {
                return bad(
                    "phases",
                    &format!("clock phase {p} lies outside [t_min, t_max] = [{lo}, {hi}]"),
                );
            }
        }
        if x.limit_points.is_empty() || !x.limit_points.iter().all(|&v| v >= 0.0) {
            return bad("limit_points", "needs at least one nonnegative start point");
        }
        let g = &x.restart_grid;
        if !(pos(g.lo_factor) && pos(g.hi_factor) && g.lo_factor < g.hi_factor) {
            return bad("restart_grid", "needs 0 < lo_factor < hi_factor");
        }
        if g.count == 0 {
            return bad("restart_grid.count", "must be >= 1");
        }
        if x.step_sizes.is_empty() || !x.step_sizes.iter().all(|&h| pos(h)) {
            return bad("step_sizes", "needs at least one positive step size");
        }
        if self.scenario == ScenarioId::DiscretizationOrder {
            if x.step_sizes.len() < 2 {
                return bad("step_sizes", "an order fit needs at least two step sizes");
            }
            let duration = self.hand.delta_t();
            for &h in &x.step_sizes {
                let n = (duration / h).round();
                if (n * h - duration).abs() > 1e-9 * duration {
                    return bad(
                        "step_sizes",
                        &format!("{h} does not divide the flow period {duration}"),
                    );
                }
            }
        }
        if x.ref_divisor == 0 {
            return bad("ref_divisor", "must be >= 1");
        }
        let m = &x.margin;
        if !(pos(m.lo) && pos(m.hi) && m.lo < m.hi) {
            return bad("margin", "needs 0 < lo < hi");
        }
        if !pos(m.hold) || !pos(m.radius) {
            return bad("margin", "hold and radius must be > 0");
        }
        if m.step_sizes.is_empty() || !m.step_sizes.iter().all(|&h| pos(h)) {
            return bad("margin.step_sizes", "needs at least one positive step size");
        }
        Ok(())
    }

    /// Built cost functions; only valid after [`ScenarioSpec::validate`].
    pub fn build_costs(&self) -> Vec<CostFunction> {
        self.costs
            .iter()
            .map(|c| c.build().expect("validated cost"))
            .collect()
    }
}

/// A validated spec plus the dotted key paths that were filled in from the
/// scenario defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub spec: ScenarioSpec,
    pub defaulted: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("{origin}:{line}:{column}: malformed JSON: {message}")]
    Syntax {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{origin}: missing required key `{key}`")]
    Missing { origin: String, key: String },

    #[error("{}: `{key}`: {message}", location(.origin, *.line))]
    Invalid {
        origin: String,
        key: String,
        line: Option<usize>,
        message: String,
    },
}

fn location(origin: &str, line: Option<usize>) -> String {
    match line {
        Some(l) => format!("{origin}:{l}"),
        None => origin.to_string(),
    }
}

impl ConfigError {
    /// Dotted path of the offending key, if the error concerns one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Missing { key, .. } | ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }

    pub fn line(&self) -> Option<usize> {
        match self {
            ConfigError::Syntax { line, .. } => Some(*line),
            ConfigError::Invalid { line, .. } => *line,
            _ => None,
        }
    }
}

/// A `key=value` override applied after merging, e.g. from `--h` or a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: String,
    pub value: Value,
}

impl Override {
    pub fn new(path: impl Into<String>, value: Value) -> Self {
        Self {
            path: path.into(),
            value,
        }
    }

    /// Parses `raw` as JSON, falling back to a plain string.
    pub fn parse(path: impl Into<String>, raw: &str) -> Self {
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        Self::new(path, value)
    }
}

pub fn parse_config(path: &Path, overrides: &[Override]) -> Result<ResolvedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text, &path.display().to_string(), overrides)
}

pub fn parse_config_str(
    text: &str,
    origin: &str,
    overrides: &[Override],
) -> Result<ResolvedConfig, ConfigError> {
    let user: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax {
        origin: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: strip_position(&e.to_string()),
    })?;
    let invalid = |key: &str, message: String| ConfigError::Invalid {
        origin: origin.to_string(),
        key: key.to_string(),
        line: locate(text, &user, key),
        message,
    };
    let Value::Object(obj) = &user else {
        return Err(invalid("<root>", "config must be a JSON object".into()));
    };
    let id_value = obj.get("scenario").ok_or_else(|| ConfigError::Missing {
        origin: origin.to_string(),
        key: "scenario".into(),
    })?;
    let id: ScenarioId = serde_json::from_value(id_value.clone()).map_err(|_| {
        let names: Vec<&str> = ScenarioId::ALL.iter().map(|s| s.as_str()).collect();
        invalid(
            "scenario",
            format!(
                "unknown scenario {id_value} (expected one of {})",
                names.join(", ")
            ),
        )
    })?;

    let mut merged = serde_json::to_value(ScenarioSpec::defaults(id)).expect("defaults serialize");
    let mut defaulted = BTreeSet::new();
    merge(&mut merged, &user, "", &mut defaulted);
    for o in overrides {
        set_path(&mut merged, &o.path, o.value.clone()).map_err(|m| invalid(&o.path, m))?;
        defaulted.retain(|k| !(k == &o.path || k.starts_with(&format!("{}.", o.path))));
    }

    let spec: ScenarioSpec = serde_path_to_error::deserialize(&merged).map_err(|e| {
        let path = e.path().to_string().replace('[', ".").replace(']', "");
        let key = if path == "." {
            "<root>".to_string()
        } else {
            path
        };
        invalid(&key, strip_position(&e.into_inner().to_string()))
    })?;
    spec.validate().map_err(|(k, m)| invalid(&k, m))?;
    let defaulted: Vec<String> = defaulted.into_iter().collect();
    log::info!(
        "resolved {} config; defaults applied to: {}",
        spec.scenario,
        if defaulted.is_empty() {
            "nothing".to_string()
        } else {
            defaulted.join(", ")
        }
    );
    Ok(ResolvedConfig { spec, defaulted })
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// Merges `user` into `base`. Objects merge key by key, except that objects
/// with different `kind` tags are replaced wholesale; everything else is
/// replaced. Leaf paths of `base` that `user` leaves untouched are collected
/// in `defaulted`.
fn merge(base: &mut Value, user: &Value, prefix: &str, defaulted: &mut BTreeSet<String>) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) if same_kind(b, u) => {
            for (k, bv) in b.iter_mut() {
                let path = join(prefix, k);
                match u.get(k) {
                    Some(uv) => merge(bv, uv, &path, defaulted),
                    None => {
                        defaulted.insert(path);
                    }
                }
            }
            for (k, uv) in u {
                if !b.contains_key(k) {
                    b.insert(k.clone(), uv.clone());
                }
            }
        }
        (b, u) => *b = u.clone(),
    }
}

fn same_kind(b: &Map<String, Value>, u: &Map<String, Value>) -> bool {
    match (b.get("kind"), u.get("kind")) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Sets the value at a dotted path; numeric segments index arrays. Missing
/// object keys are created so that misspellings surface as unknown keys.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), String> {
    if path.is_empty() {
        return Err("empty key path".into());
    }
    let segs: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (i, seg) in segs.iter().enumerate() {
        let last = i + 1 == segs.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| format!("`{seg}` is not an array index"))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| format!("index {idx} out of range (length {len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("`{seg}` is not inside an object or array")),
        };
    }
    unreachable!("loop returns on the last segment")
}

/// Line of the key at `path` in the source text, if the user wrote it.
/// Segments are searched for in order, each after the previous match.
fn locate(text: &str, user: &Value, path: &str) -> Option<usize> {
    let mut node = user;
    let mut offset = 0;
    let mut found = None;
    for seg in path.split('.') {
        match node {
            Value::Object(map) => {
                node = map.get(seg)?;
                let needle = format!("\"{seg}\"");
                let at = offset + text[offset..].find(&needle)?;
                offset = at + needle.len();
                found = Some(at);
            }
            Value::Array(items) => {
                node = items.get(seg.parse::<usize>().ok()?)?;
            }
            _ => break,
        }
    }
    found.map(|at| text[..at].matches('\n').count() + 1)
}
