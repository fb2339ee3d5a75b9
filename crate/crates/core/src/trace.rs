//! Sampled hybrid arcs.

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::state::{HybridState, HybridTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    /// Sample on a flow interval (including the initial point).
    Flow,
    /// State right after a jump.
    Jump,
    /// The offending state of a faulted run.
    Fault,
}

impl PointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PointKind::Flow => "flow",
            PointKind::Jump => "jump",
            PointKind::Fault => "fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub time: HybridTime,
    pub state: HybridState,
    pub kind: PointKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    /// Hybrid time of the pre-jump state; the post-jump state sits at `(t, j + 1)`.
    pub time: HybridTime,
    pub pre: HybridState,
    pub post: HybridState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// The state left `C_h ∪ D_h`.
    EscapedDomain,
    /// Non-finite state or norm above the configured blow-up threshold.
    BlowUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum Termination {
    Horizon,
    JumpCap,
    Fault { kind: FaultKind, message: String },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Horizon => "horizon",
            Termination::JumpCap => "jump_cap",
            Termination::Fault {
                kind: FaultKind::EscapedDomain,
                ..
            } => "escaped_domain",
            Termination::Fault {
                kind: FaultKind::BlowUp,
                ..
            } => "blow_up",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub points: Vec<TracePoint>,
    pub events: Vec<JumpRecord>,
    pub termination: Termination,
    pub config: SolverConfig,
}

impl Trace {
    pub fn is_faulted(&self) -> bool {
        matches!(self.termination, Termination::Fault { .. })
    }

    pub fn is_blow_up(&self) -> bool {
        matches!(
            self.termination,
            Termination::Fault {
                kind: FaultKind::BlowUp,
                ..
            }
        )
    }

    pub fn first(&self) -> Option<&TracePoint> {
        self.points.first()
    }

    pub fn last(&self) -> Option<&TracePoint> {
        self.points.last()
    }

    /// Samples of the first flow interval (`j = 0`).
    pub fn first_flow(&self) -> impl Iterator<Item = &TracePoint> {
        self.points.iter().take_while(|p| p.time.j == 0)
    }

    /// Finite (non-fault) samples.
    pub fn samples(&self) -> impl Iterator<Item = &TracePoint> {
        self.points.iter().filter(|p| p.kind != PointKind::Fault)
    }

    /// Flow intervals as `(start, end)` index pairs into `points`; the end of
    /// each interval is a pre-jump sample or the final sample.
    pub fn flow_intervals(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.points.len() {
            let boundary = i == self.points.len()
                || self.points[i].time.j != self.points[start].time.j
                || self.points[i].kind == PointKind::Fault;
            if boundary {
                out.push((start, i - 1));
                if i < self.points.len() && self.points[i].kind == PointKind::Fault {
                    break;
                }
                start = i;
            }
        }
        out
    }

    /// Checks the hybrid-time-domain invariants: within a flow interval `t`
    /// strictly increases by multiples of `h` (at most `record_stride * h`);
    /// across a jump `t` is unchanged and `j` grows by exactly one; the event
    /// list matches the recorded jumps.
    pub fn check_well_formed(&self) -> Result<(), String> {
        let h = self.config.h;
        let max_gap = self.config.record_stride as f64 * h;
        let mut jumps_seen = 0usize;
        for w in self.points.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if b.kind == PointKind::Fault {
                continue;
            }
            if b.time.j == a.time.j {
                let dt = b.time.t - a.time.t;
                if !(dt > 0.0) {
                    return Err(format!(
                        "t does not increase at {:?} -> {:?}",
                        a.time, b.time
                    ));
                }
                let steps = dt / h;
                if (steps - steps.round()).abs() > 1e-6 * steps.max(1.0) {
                    return Err(format!("gap {dt} is not a multiple of h at {:?}", b.time));
                }
                if dt > max_gap * (1.0 + 1e-9) {
                    return Err(format!("gap {dt} exceeds stride at {:?}", b.time));
                }
            } else if b.time.j == a.time.j + 1 {
                if b.time.t != a.time.t {
                    return Err(format!("jump changed t at {:?} -> {:?}", a.time, b.time));
                }
                if b.kind != PointKind::Jump {
                    return Err(format!("j increased without a jump at {:?}", b.time));
                }
                let ev = self
                    .events
                    .get(jumps_seen)
                    .ok_or_else(|| format!("missing jump record for {:?}", b.time))?;
                if ev.time != a.time || ev.post != b.state || ev.pre != a.state {
                    return Err(format!("jump record mismatch at {:?}", b.time));
                }
                jumps_seen += 1;
            } else {
                return Err(format!(
                    "invalid hybrid time step {:?} -> {:?}",
                    a.time, b.time
                ));
            }
        }
        if jumps_seen != self.events.len() {
            return Err(format!(
                "{} jump records but {} recorded jumps",
                self.events.len(),
                jumps_seen
            ));
        }
        Ok(())
    }
}
