//! HAND-1 and HAND-2: the accelerated flow with a clock `tau` that is reset
//! to `T_min` on jumps. HAND-1 resets only the clock; HAND-2 also resets the
//! momentum state to the position.

use serde::{Deserialize, Serialize};

use crate::cost::CostFunction;
use crate::dynamics::hand_flow_into;
use crate::engine::{HybridSystem, CLOCK_TOL};
use crate::error::{check_dim, invalid, Result};
use crate::state::HybridState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandKind {
    #[serde(rename = "hand1")]
    Hand1,
    #[serde(rename = "hand2")]
    Hand2,
}

impl HandKind {
    pub fn label(self) -> &'static str {
        match self {
            HandKind::Hand1 => "HAND-1",
            HandKind::Hand2 => "HAND-2",
        }
    }
}

/// Clock thresholds (seconds) and flow gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandParams {
    pub t_min: f64,
    /// Earliest admissible reset clock; HAND-1 only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_med: Option<f64>,
    pub t_max: f64,
    pub c: f64,
}

impl HandParams {
    pub fn hand1(t_min: f64, t_med: f64, t_max: f64, c: f64) -> Self {
        Self {
            t_min,
            t_med: Some(t_med),
            t_max,
            c,
        }
    }

    pub fn hand2(t_min: f64, t_max: f64, c: f64) -> Self {
        Self {
            t_min,
            t_med: None,
            t_max,
            c,
        }
    }

    /// `ΔT = T_max - T_min`.
    pub fn delta_t(&self) -> f64 {
        self.t_max - self.t_min
    }

    /// Lower end of the jump window: `T_med` for HAND-1, `T_max` for HAND-2.
    pub fn jump_threshold(&self, kind: HandKind) -> f64 {
        match kind {
            HandKind::Hand1 => self.t_med.unwrap_or(self.t_max),
            HandKind::Hand2 => self.t_max,
        }
    }

    pub fn validate(&self, kind: HandKind) -> Result<()> {
        let finite = [self.t_min, self.t_max, self.c]
            .iter()
            .chain(self.t_med.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("hand_params", "all parameters must be finite"));
        }
        if !(self.c > 0.0) {
            return Err(invalid("c", format!("must be > 0, got {}", self.c)));
        }
        if !(self.t_min > 0.0) {
            return Err(invalid("t_min", format!("must be > 0, got {}", self.t_min)));
        }
        match kind {
            HandKind::Hand1 => {
                let t_med = self
                    .t_med
                    .ok_or_else(|| invalid("t_med", "HAND-1 requires t_med"))?;
                if !(self.t_min < t_med && t_med <= self.t_max) {
                    return Err(invalid(
                        "t_med",
                        format!(
                            "HAND-1 needs 0 < t_min < t_med <= t_max, got t_min={}, t_med={}, t_max={}",
                            self.t_min, t_med, self.t_max
                        ),
                    ));
                }
            }
            HandKind::Hand2 => {
                if self.t_med.is_some() {
                    return Err(invalid("t_med", "HAND-2 does not use t_med"));
                }
                if !(self.t_min < self.t_max) {
                    return Err(invalid(
                        "t_max",
                        format!(
                            "HAND-2 needs 0 < t_min < t_max, got t_min={}, t_max={}",
                            self.t_min, self.t_max
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A HAND hybrid system on the flat state `[x1, x2, tau]`.
#[derive(Debug, Clone)]
pub struct Hand {
    kind: HandKind,
    params: HandParams,
    cost: CostFunction,
    order: f64,
}

impl Hand {
    pub fn new(kind: HandKind, cost: CostFunction, params: HandParams) -> Result<Self> {
        params.validate(kind)?;
        Ok(Self {
            kind,
            params,
            cost,
            order: 2.0,
        })
    }

    /// Uses the order-`p` flow `((p/tau)(x2 - x1), -c p tau^(p-1) grad f, 1)`.
    pub fn with_order(mut self, p: f64) -> Result<Self> {
        if !(p >= 2.0 && p.is_finite()) {
            return Err(invalid("p", format!("must be >= 2, got {p}")));
        }
        self.order = p;
        Ok(self)
    }

    pub fn kind(&self) -> HandKind {
        self.kind
    }

    pub fn params(&self) -> &HandParams {
        &self.params
    }

    pub fn cost(&self) -> &CostFunction {
        &self.cost
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.cost.dim()
    }

    /// `(x0, x0, T_min)`: the initial condition used by the rate theorems.
    pub fn rest_state(&self, x0: &[f64]) -> HybridState {
        HybridState::new(x0, x0, self.params.t_min)
    }

    pub fn jump_state(&self, z: &HybridState) -> Result<HybridState> {
        let mut out = z.clone();
        self.jump(z.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }
}

impl HybridSystem for Hand {
    fn state_len(&self) -> usize {
        2 * self.cost.dim() + 1
    }

    fn flow(&self, z: &[f64], dz: &mut [f64]) -> Result<()> {
        hand_flow_into(z, self.params.c, self.order, &self.cost, dz)
    }

    fn jump(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.cost.dim();
        check_dim(2 * n + 1, z.len())?;
        check_dim(z.len(), out.len())?;
        out[..n].copy_from_slice(&z[..n]);
        match self.kind {
            HandKind::Hand1 => out[n..2 * n].copy_from_slice(&z[n..2 * n]),
            HandKind::Hand2 => out[n..2 * n].copy_from_slice(&z[..n]),
        }
        out[2 * n] = self.params.t_min;
        Ok(())
    }

    fn in_flow_set(&self, z: &[f64], inflation: f64) -> bool {
        let tau = z[z.len() - 1];
        let slack = CLOCK_TOL + inflation;
        tau >= self.params.t_min - slack && tau <= self.params.t_max + slack
    }

    fn in_jump_set(&self, z: &[f64], inflation: f64) -> bool {
        let tau = z[z.len() - 1];
        let slack = CLOCK_TOL + inflation;
        tau >= self.params.jump_threshold(self.kind) - slack && tau <= self.params.t_max + slack
    }

    fn remaining_flow_time(&self, z: &[f64]) -> Option<f64> {
        Some(self.params.t_max - z[z.len() - 1])
    }
}

pub fn hand1(f: CostFunction, params: HandParams) -> Result<Hand> {
    Hand::new(HandKind::Hand1, f, params)
}

/// Builds HAND-2. A violated dwell condition is logged, not rejected.
pub fn hand2(f: CostFunction, params: HandParams) -> Result<Hand> {
    let hand = Hand::new(HandKind::Hand2, f, params)?;
    if let Some(mu) = hand.cost.mu() {
        if !validate_dwell(&params, mu) {
            log::warn!(
                "dwell condition fails: t_max^2 - t_min^2 = {} <= 1/(mu c) = {}",
                params.t_max * params.t_max - params.t_min * params.t_min,
                1.0 / (mu * params.c)
            );
        }
    }
    Ok(hand)
}

/// `T_max^2 - T_min^2 > 1 / (mu c)`.
pub fn validate_dwell(params: &HandParams, mu: f64) -> bool {
    params.t_max * params.t_max - params.t_min * params.t_min > 1.0 / (mu * params.c)
}

/// Distance from `z` to `{x*} × {x*} × [T_min, T_max]`.
pub fn target_distance(z: &HybridState, xstar: &[f64], params: &HandParams) -> f64 {
    let d1 = crate::dist(z.x1(), xstar);
    let d2 = crate::dist(z.x2(), xstar);
    let tau = z.tau();
    let dt = if tau < params.t_min {
        params.t_min - tau
    } else if tau > params.t_max {
        tau - params.t_max
    } else {
        0.0
    };
    (d1 * d1 + d2 * d2 + dt * dt).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::corpus;

    #[test]
    fn jump_maps() {
        let f = corpus::half_square(1);
        let h1 = hand1(f.clone(), HandParams::hand1(1.0, 2.0, 3.0, 1.0)).unwrap();
        let z = HybridState::new(&[5.0], &[-3.0], 2.7);
        assert_eq!(
            h1.jump_state(&z).unwrap(),
            HybridState::new(&[5.0], &[-3.0], 1.0)
        );
        let h2 = hand2(f, HandParams::hand2(1.0, 2.0, 1.0)).unwrap();
        let z = HybridState::new(&[5.0], &[-3.0], 2.0);
        assert_eq!(
            h2.jump_state(&z).unwrap(),
            HybridState::new(&[5.0], &[5.0], 1.0)
        );
    }

    #[test]
    fn parameter_ordering() {
        let f = corpus::half_square(1);
        assert!(hand1(f.clone(), HandParams::hand1(1.0, 0.5, 3.0, 1.0)).is_err());
        assert!(hand1(f.clone(), HandParams::hand1(1.0, 3.0, 2.0, 1.0)).is_err());
        assert!(hand1(f.clone(), HandParams::hand1(1.0, 3.0, 3.0, 1.0)).is_ok());
        assert!(hand2(f.clone(), HandParams::hand2(2.0, 1.0, 1.0)).is_err());
        assert!(hand2(f.clone(), HandParams::hand2(0.0, 1.0, 1.0)).is_err());
        assert!(hand2(f, HandParams::hand2(1.0, 2.0, -1.0)).is_err());
    }

    #[test]
    fn dwell() {
        assert!(validate_dwell(&HandParams::hand2(1.0, 2.0, 1.0), 1.0));
        assert!(!validate_dwell(&HandParams::hand2(1.0, 1.2, 1.0), 1.0));
    }

    #[test]
    fn distance() {
        let p = HandParams::hand2(1.0, 2.0, 1.0);
        let z = HybridState::new(&[3.0], &[4.0], 1.5);
        assert_eq!(target_distance(&z, &[0.0], &p), 5.0);
        let z = HybridState::new(&[0.0], &[0.0], 1.0);
        assert_eq!(target_distance(&z, &[0.0], &p), 0.0);
        let z = HybridState::new(&[0.0], &[0.0], 2.5);
        assert_eq!(target_distance(&z, &[0.0], &p), 0.5);
    }
}
