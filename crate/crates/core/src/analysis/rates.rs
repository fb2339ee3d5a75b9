//! Rate certificates for HAND-1 (`f~ <= beta / tau^2` on the first flow) and
//! HAND-2 (exponential decay), the restart constants, and time-to-epsilon.

use serde::{Deserialize, Serialize};

use super::RateReport;
use crate::cost::CostFunction;
use crate::error::{Error, Result};
use crate::hands::{validate_dwell, Hand, HandKind, HandParams};
use crate::state::HybridTime;
use crate::trace::{PointKind, Trace};

/// `beta = r^2 / (2c) + T_min^2 f~0`.
pub fn beta_constant(r: f64, c: f64, t_min: f64, f_gap0: f64) -> f64 {
    r * r / (2.0 * c) + t_min * t_min * f_gap0
}

/// `beta` for the initial point of `trace`, with `r = |x1(0,0) - x*|`.
pub fn beta_for_trace(trace: &Trace, f: &CostFunction, params: &HandParams) -> Result<f64> {
    let first = trace
        .first()
        .ok_or_else(|| Error::Precondition("empty trace".into()))?;
    let r = crate::dist(first.state.x1(), f.require_xstar()?);
    let gap0 = f.suboptimality(first.state.x1())?;
    Ok(beta_constant(r, params.c, params.t_min, gap0))
}

/// `1e-6 + 10 L h`.
pub fn default_tolerance(f: &CostFunction, h: f64) -> Result<f64> {
    Ok(1e-6 + 10.0 * f.require_lipschitz()? * h)
}

fn check_rest_start(trace: &Trace, params: &HandParams) -> Result<()> {
    let first = trace
        .first()
        .ok_or_else(|| Error::Precondition("empty trace".into()))?;
    let z = &first.state;
    let mismatch = crate::dist(z.x1(), z.x2());
    let scale = crate::norm(z.x1()).max(1.0);
    if mismatch > 1e-12 * scale {
        return Err(Error::Precondition(format!(
            "rate bound needs x2(0,0) = x1(0,0), got |x2 - x1| = {mismatch:e}"
        )));
    }
    if (z.tau() - params.t_min).abs() > 1e-12 * params.t_min.max(1.0) {
        return Err(Error::Precondition(format!(
            "rate bound needs tau(0,0) = T_min = {}, got {}",
            params.t_min,
            z.tau()
        )));
    }
    Ok(())
}

/// Checks `f(x1(t,0)) - f* <= beta / tau(t,0)^2 + tolerance` on every recorded
/// sample of the first flow interval.
pub fn check_thm1_rate(
    trace: &Trace,
    f: &CostFunction,
    params: &HandParams,
    beta: f64,
    tolerance: f64,
) -> Result<RateReport> {
    check_rest_start(trace, params)?;
    let mut report = RateReport::new(tolerance);
    for pt in trace.first_flow().filter(|p| p.kind != PointKind::Fault) {
        let tau = pt.state.tau();
        let bound = beta / (tau * tau);
        let gap = f.suboptimality(pt.state.x1())?;
        report.push_bound(pt.time, bound);
        report.record(pt.time, bound - gap);
    }
    Ok(report)
}

/// The `beta / t^2` form, checked on the samples of the first flow with `t > 0`.
pub fn check_thm1_rate_t(
    trace: &Trace,
    f: &CostFunction,
    params: &HandParams,
    beta: f64,
    tolerance: f64,
) -> Result<RateReport> {
    check_rest_start(trace, params)?;
    let mut report = RateReport::new(tolerance);
    for pt in trace
        .first_flow()
        .filter(|p| p.kind != PointKind::Fault && p.time.t > 0.0)
    {
        let bound = beta / (pt.time.t * pt.time.t);
        let gap = f.suboptimality(pt.state.x1())?;
        report.push_bound(pt.time, bound);
        report.record(pt.time, bound - gap);
    }
    Ok(report)
}

/// `k0 = (1/(c mu) + T_min^2) / T_max^2`: per-period contraction factor.
pub fn k0_constant(c: f64, mu: f64, t_min: f64, t_max: f64) -> f64 {
    (1.0 / (c * mu) + t_min * t_min) / (t_max * t_max)
}

/// `k1 = (1/(c mu) + T_min^2) / ΔT^2`.
pub fn k1_constant(c: f64, mu: f64, t_min: f64, delta_t: f64) -> f64 {
    (1.0 / (c * mu) + t_min * t_min) / (delta_t * delta_t)
}

/// `(1/(c mu) + T_min^2) / T_min^2`: worst-case growth of `f~` within one flow
/// period relative to its value at the restart.
pub fn flow_gain_constant(c: f64, mu: f64, t_min: f64) -> f64 {
    (1.0 / (c * mu) + t_min * t_min) / (t_min * t_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thm2Constants {
    pub k0: f64,
    pub k1: f64,
    /// Gain used in `k_a`.
    pub k1_flow: f64,
    pub k_a: f64,
    pub kb_tilde: f64,
    pub delta_t: f64,
}

/// Constants of the HAND-2 bound `f~ <= k_a exp(-k~_b alpha~(t + j)) |x1(0,0) - x*|^2`,
/// with `k_a = L k1_flow / 2` and `k~_b = 1 - k0`.
pub fn thm2_constants(f: &CostFunction, params: &HandParams) -> Result<Thm2Constants> {
    let mu = f.require_mu()?;
    let l = f.require_lipschitz()?;
    let dt = params.delta_t();
    let k0 = k0_constant(params.c, mu, params.t_min, params.t_max);
    let k1_flow = flow_gain_constant(params.c, mu, params.t_min);
    Ok(Thm2Constants {
        k0,
        k1: k1_constant(params.c, mu, params.t_min, dt),
        k1_flow,
        k_a: 0.5 * k1_flow * l,
        kb_tilde: 1.0 - k0,
        delta_t: dt,
    })
}

/// Checks the HAND-2 exponential bound at every recorded sample.
pub fn check_thm2_rate(trace: &Trace, hand: &Hand, tolerance: f64) -> Result<RateReport> {
    if hand.kind() != HandKind::Hand2 {
        return Err(Error::Precondition(
            "the exponential bound applies to HAND-2".into(),
        ));
    }
    let f = hand.cost();
    let params = hand.params();
    let mu = f.require_mu()?;
    if !validate_dwell(params, mu) {
        return Err(Error::Precondition(
            "dwell condition T_max^2 - T_min^2 > 1/(mu c) does not hold".into(),
        ));
    }
    check_rest_start(trace, params)?;
    let k = thm2_constants(f, params)?;
    let xstar = f.require_xstar()?;
    let first = trace.first().expect("checked non-empty");
    let r2 = crate::dist(first.state.x1(), xstar).powi(2);
    let mut report = RateReport::new(tolerance);
    for pt in trace.samples() {
        let s = pt.time.t + pt.time.j as f64;
        let alpha = (s - k.delta_t).max(0.0) / (k.delta_t + 1.0);
        let bound = k.k_a * (-k.kb_tilde * alpha).exp() * r2;
        let gap = f.suboptimality(pt.state.x1())?;
        report.push_bound(pt.time, bound);
        report.record(pt.time, bound - gap);
    }
    Ok(report)
}

/// `f~(end) / f~(start)` for every complete flow period (one ending in a jump).
/// Periods starting with `f~ = 0` are skipped.
pub fn period_contractions(trace: &Trace, f: &CostFunction) -> Result<Vec<f64>> {
    period_contractions_above(trace, f, 0.0)
}

/// Like [`period_contractions`], skipping periods that start with
/// `f~ <= floor`. Near the optimizer `f~` is dominated by rounding in
/// `f(x) - f*`, and ratios of rounding noise say nothing about contraction.
pub fn period_contractions_above(trace: &Trace, f: &CostFunction, floor: f64) -> Result<Vec<f64>> {
    let intervals = trace.flow_intervals();
    let mut out = Vec::new();
    for (start, end) in intervals {
        let ends_in_jump = trace
            .points
            .get(end + 1)
            .is_some_and(|p| p.kind == PointKind::Jump);
        if !ends_in_jump {
            continue;
        }
        let g0 = f.suboptimality(trace.points[start].state.x1())?;
        let g1 = f.suboptimality(trace.points[end].state.x1())?;
        if g0 > floor {
            out.push(g1 / g0);
        }
    }
    Ok(out)
}

/// `ΔT* = e sqrt(1/(c mu) + T_min^2)`.
pub fn optimal_restart(c: f64, mu: f64, t_min: f64) -> f64 {
    std::f64::consts::E * (1.0 / (c * mu) + t_min * t_min).sqrt()
}

/// `t_eps = (e/2) sqrt(1/(c mu) + T_min^2) ln(f~0 / eps)`.
pub fn lemma1_time_estimate(c: f64, mu: f64, t_min: f64, f_gap0: f64, eps: f64) -> f64 {
    0.5 * optimal_restart(c, mu, t_min) * (f_gap0 / eps).ln()
}

fn first_settled<'a, I>(samples: I, f: &CostFunction, eps: f64) -> Result<Option<HybridTime>>
where
    I: DoubleEndedIterator<Item = &'a crate::trace::TracePoint>,
{
    let mut hit = None;
    for pt in samples.rev() {
        if f.suboptimality(pt.state.x1())? <= eps {
            hit = Some(pt.time);
        } else {
            break;
        }
    }
    Ok(hit)
}

/// First recorded `(t, j)` after which `f~ <= eps` at every later sample.
/// `None` for faulted traces or if the final sample is above `eps`.
pub fn time_to_epsilon(trace: &Trace, f: &CostFunction, eps: f64) -> Result<Option<HybridTime>> {
    if trace.is_faulted() {
        return Ok(None);
    }
    first_settled(trace.points.iter(), f, eps)
}

/// Like [`time_to_epsilon`] but only looks at the initial point and the
/// pre-jump samples, i.e. the ends of the flow periods.
pub fn time_to_epsilon_period_ends(
    trace: &Trace,
    f: &CostFunction,
    eps: f64,
) -> Result<Option<HybridTime>> {
    if trace.is_faulted() {
        return Ok(None);
    }
    let mut ends = Vec::new();
    if let Some(p) = trace.first() {
        ends.push(p);
    }
    for w in trace.points.windows(2) {
        if w[1].kind == PointKind::Jump {
            ends.push(&w[0]);
        }
    }
    first_settled(ends.into_iter(), f, eps)
}
