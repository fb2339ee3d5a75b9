//! The Lyapunov function `V(z) = |x2 - x*|^2 / 2 + c tau^2 (f(x1) - f*)` and
//! its flow/jump increments.

use serde::{Deserialize, Serialize};

use super::RateReport;
use crate::cost::CostFunction;
use crate::error::Result;
use crate::hands::{Hand, HandKind};
use crate::state::HybridState;
use crate::trace::Trace;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn lyapunov(z: &HybridState, f: &CostFunction, c: f64) -> Result<f64> {
    let xstar = f.require_xstar()?;
    let gap = f.suboptimality(z.x1())?;
    let tau = z.tau();
    Ok(0.5 * sq_dist(z.x2(), xstar) + c * tau * tau * gap)
}

/// Time derivative of `V` along the `p = 2` HAND flow:
/// `u_C(z) = -2 c tau [grad f(x1)'(x1 - x*) - (f(x1) - f*)]`.
pub fn flow_decrease_rate(z: &HybridState, f: &CostFunction, c: f64) -> Result<f64> {
    let xstar = f.require_xstar()?;
    let gap = f.suboptimality(z.x1())?;
    let g = f.gradient(z.x1());
    let inner: f64 = g
        .iter()
        .zip(z.x1())
        .zip(xstar)
        .map(|((gi, x), s)| gi * (x - s))
        .sum();
    Ok(-2.0 * c * z.tau() * (inner - gap))
}

/// `V(G(z)) - V(z) = -c f~(x1) (tau^2 - T_min^2)` for HAND-1.
pub fn hand1_jump_change(z: &HybridState, f: &CostFunction, c: f64, t_min: f64) -> Result<f64> {
    let gap = f.suboptimality(z.x1())?;
    let tau = z.tau();
    Ok(-c * gap * (tau * tau - t_min * t_min))
}

/// `V(G(z)) - V(z) = |x1 - x*|^2/2 - |x2 - x*|^2/2 - c f~(x1) (tau^2 - T_min^2)`
/// for HAND-2.
pub fn hand2_jump_change(z: &HybridState, f: &CostFunction, c: f64, t_min: f64) -> Result<f64> {
    let xstar = f.require_xstar()?;
    let gap = f.suboptimality(z.x1())?;
    let tau = z.tau();
    Ok(0.5 * sq_dist(z.x1(), xstar)
        - 0.5 * sq_dist(z.x2(), xstar)
        - c * gap * (tau * tau - t_min * t_min))
}

/// Strong-convexity upper bound on the HAND-2 jump change:
/// `-c f~(x1) (tau^2 - T_min^2 - 1/(mu c)) - |x2 - x*|^2 / 2`.
pub fn hand2_jump_bound(z: &HybridState, f: &CostFunction, c: f64, t_min: f64) -> Result<f64> {
    let xstar = f.require_xstar()?;
    let mu = f.require_mu()?;
    let gap = f.suboptimality(z.x1())?;
    let tau = z.tau();
    Ok(-c * gap * (tau * tau - t_min * t_min - 1.0 / (mu * c)) - 0.5 * sq_dist(z.x2(), xstar))
}

pub fn jump_change(hand: &Hand, z: &HybridState) -> Result<f64> {
    let p = hand.params();
    match hand.kind() {
        HandKind::Hand1 => hand1_jump_change(z, hand.cost(), p.c, p.t_min),
        HandKind::Hand2 => hand2_jump_change(z, hand.cost(), p.c, p.t_min),
    }
}

/// Along every flow interval, `V` may grow by at most
/// `slack_per_step * h * max(1, V_start)` per integration step, where `V_start`
/// is the value at the beginning of the interval; across every jump it must
/// not grow at all.
///
/// The margin of a flow pair is `allowance - (V_b - V_a)`; of a jump,
/// `V_pre - V_post`. The report tolerance is zero.
pub fn check_monotonicity(
    trace: &Trace,
    f: &CostFunction,
    c: f64,
    slack_per_step: f64,
) -> Result<RateReport> {
    let h = trace.config.h;
    let mut report = RateReport::new(0.0);
    let mut scale = 1.0;
    let mut prev: Option<(&crate::trace::TracePoint, f64)> = None;
    for pt in trace.samples() {
        let v = lyapunov(&pt.state, f, c)?;
        report.push_bound(pt.time, v);
        if let Some((a, va)) = prev {
            if pt.time.j == a.time.j {
                let steps = ((pt.time.t - a.time.t) / h).round();
                let allowance = slack_per_step * h * steps * scale;
                report.record(pt.time, allowance - (v - va));
            } else {
                scale = v.max(1.0);
                report.record(pt.time, va - v);
            }
        } else {
            scale = v.max(1.0);
        }
        prev = Some((pt, v));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpIdentityReport {
    pub jumps: usize,
    /// Largest `|simulated - closed form| / max(|closed form|, V_pre)`.
    pub max_rel_error: f64,
}

/// Compares `V(post) - V(pre)` at every recorded jump with the closed form.
pub fn check_jump_identities(trace: &Trace, hand: &Hand) -> Result<JumpIdentityReport> {
    let f = hand.cost();
    let c = hand.params().c;
    let mut worst: f64 = 0.0;
    for ev in &trace.events {
        let v_pre = lyapunov(&ev.pre, f, c)?;
        let v_post = lyapunov(&ev.post, f, c)?;
        let closed = jump_change(hand, &ev.pre)?;
        let denom = closed.abs().max(v_pre.abs());
        if denom > 0.0 {
            worst = worst.max(((v_post - v_pre) - closed).abs() / denom);
        } else if v_post != v_pre {
            worst = f64::INFINITY;
        }
    }
    Ok(JumpIdentityReport {
        jumps: trace.events.len(),
        max_rel_error: worst,
    })
}
