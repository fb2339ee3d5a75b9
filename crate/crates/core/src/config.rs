//! Solver configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::ButcherTableau;
use crate::error::{invalid, Result};

/// Named explicit Runge-Kutta tableaus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableauId {
    Euler,
    Midpoint,
    Heun,
    Rk3,
    Rk4,
}

impl TableauId {
    pub fn tableau(self) -> ButcherTableau {
        match self {
            TableauId::Euler => ButcherTableau::euler(),
            TableauId::Midpoint => ButcherTableau::midpoint(),
            TableauId::Heun => ButcherTableau::heun(),
            TableauId::Rk3 => ButcherTableau::rk3(),
            TableauId::Rk4 => ButcherTableau::rk4(),
        }
    }
}

/// Flow discretization. Serialized as `"euler"`, `"midpoint"`, `"heun"`,
/// `"rk3"` or `"rk4"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Integrator {
    Euler,
    RungeKutta(TableauId),
}

impl Integrator {
    pub fn tableau(self) -> ButcherTableau {
        match self {
            Integrator::Euler => ButcherTableau::euler(),
            Integrator::RungeKutta(id) => id.tableau(),
        }
    }

    /// Classical order of accuracy.
    pub fn order(self) -> u32 {
        match self {
            Integrator::Euler | Integrator::RungeKutta(TableauId::Euler) => 1,
            Integrator::RungeKutta(TableauId::Midpoint | TableauId::Heun) => 2,
            Integrator::RungeKutta(TableauId::Rk3) => 3,
            Integrator::RungeKutta(TableauId::Rk4) => 4,
        }
    }
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Integrator::Euler => "euler",
            Integrator::RungeKutta(TableauId::Euler) => "rk1",
            Integrator::RungeKutta(TableauId::Midpoint) => "midpoint",
            Integrator::RungeKutta(TableauId::Heun) => "heun",
            Integrator::RungeKutta(TableauId::Rk3) => "rk3",
            Integrator::RungeKutta(TableauId::Rk4) => "rk4",
        };
        f.write_str(s)
    }
}

impl FromStr for Integrator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "euler" => Integrator::Euler,
            "rk1" => Integrator::RungeKutta(TableauId::Euler),
            "midpoint" => Integrator::RungeKutta(TableauId::Midpoint),
            "heun" => Integrator::RungeKutta(TableauId::Heun),
            "rk3" => Integrator::RungeKutta(TableauId::Rk3),
            "rk4" => Integrator::RungeKutta(TableauId::Rk4),
            other => {
                return Err(format!(
                    "unknown integrator `{other}` (expected euler, rk1, midpoint, heun, rk3 or rk4)"
                ))
            }
        })
    }
}

impl From<Integrator> for String {
    fn from(i: Integrator) -> Self {
        i.to_string()
    }
}

impl TryFrom<String> for Integrator {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, Self::Error> {
        s.parse()
    }
}

/// Resolution of the flow/jump ambiguity on `C ∩ D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
#[derive(Default)]
pub enum JumpPolicy {
    EarliestJump,
    #[default]
    LatestJump,
    /// Reset clock uniformly distributed over the admissible window.
    UniformRandom {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Step size (seconds).
    pub h: f64,
    /// Flow-time horizon (seconds).
    pub t_end: f64,
    pub max_jumps: u64,
    pub integrator: Integrator,
    pub jump_policy: JumpPolicy,
    /// Record every `record_stride`-th flow step (jumps are always recorded).
    pub record_stride: u64,
    /// States with Euclidean norm above this are reported as a blow-up fault.
    pub blowup_norm: f64,
}

impl SolverConfig {
    pub fn new(h: f64, t_end: f64) -> Self {
        Self {
            h,
            t_end,
            max_jumps: 10_000_000,
            integrator: Integrator::RungeKutta(TableauId::Rk4),
            jump_policy: JumpPolicy::LatestJump,
            record_stride: 1,
            blowup_norm: 1e150,
        }
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_policy(mut self, policy: JumpPolicy) -> Self {
        self.jump_policy = policy;
        self
    }

    pub fn with_stride(mut self, stride: u64) -> Self {
        self.record_stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(invalid(
                "h",
                format!("step size must be > 0, got {}", self.h),
            ));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid(
                "t_end",
                format!("horizon must be > 0, got {}", self.t_end),
            ));
        }
        if self.record_stride < 1 {
            return Err(invalid("record_stride", "must be >= 1"));
        }
        if !(self.blowup_norm > 0.0) {
            return Err(invalid("blowup_norm", "must be > 0"));
        }
        Ok(())
    }

    /// Number of flow steps needed to cover `t_end`.
    pub fn max_steps(&self) -> u64 {
        let n = self.t_end / self.h;
        let r = n.round();
        if (n - r).abs() <= 1e-9 * r.max(1.0) {
            r as u64
        } else {
            n.ceil() as u64
        }
    }
}
