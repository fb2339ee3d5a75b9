//! Experiment probes: non-uniformity of the nominal ODE, clock-phase
//! independence of HAND-1, restart-period sweeps, discretization order and
//! empirical robustness margins.

use serde::{Deserialize, Serialize};

use super::rates::{time_to_epsilon, time_to_epsilon_period_ends};
use crate::config::{Integrator, SolverConfig, TableauId};
use crate::cost::CostFunction;
use crate::dynamics::{NominalOde, OdeParams, Representation};
use crate::engine::{
    integrate_flow, regularity_defect, simulate, ButcherTableau, HybridSystem, PerturbationSet,
    SystemFlow,
};
use crate::error::{check_dim, invalid, Error, Result};
use crate::hands::{hand1, hand2, target_distance, Hand, HandParams};
use crate::signal::DisturbanceSpec;
use crate::state::HybridState;
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    pub h: f64,
    pub integrator: Integrator,
    pub record_stride: u64,
    /// Nominal-ODE horizon is `horizon_scale * t0 + horizon_offset`.
    pub horizon_scale: f64,
    pub horizon_offset: f64,
    /// Horizon of each HAND-1 run.
    pub hand_horizon: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            h: 1e-2,
            integrator: Integrator::RungeKutta(TableauId::Rk4),
            record_stride: 10,
            horizon_scale: 5.0,
            horizon_offset: 50.0,
            hand_horizon: 100.0,
        }
    }
}

impl ProbeSettings {
    fn config(&self, t_end: f64) -> SolverConfig {
        SolverConfig::new(self.h, t_end)
            .with_integrator(self.integrator)
            .with_stride(self.record_stride)
    }
}

/// One probe run: the start parameter (`t0` or initial clock) and the flow
/// time needed to settle below `eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub start: f64,
    pub time_to_eps: Option<f64>,
}

fn shifted(xstar: &[f64], offset: &[f64]) -> Vec<f64> {
    xstar.iter().zip(offset).map(|(a, b)| a + b).collect()
}

/// Integrates the nominal ODE (velocity form) from `(x* + x_offset, 0)` at
/// each initial time `t0` and measures the time to reach `f~ <= eps`.
pub fn uniformity_probe(
    f: &CostFunction,
    params: &OdeParams,
    offsets: &[f64],
    x_offset: &[f64],
    eps: f64,
    settings: &ProbeSettings,
) -> Result<Vec<ProbeRow>> {
    Ok(
        uniformity_runs(f, params, offsets, x_offset, eps, settings)?
            .into_iter()
            .map(|(row, _)| row)
            .collect(),
    )
}

/// [`uniformity_probe`], keeping the simulated traces.
pub fn uniformity_runs(
    f: &CostFunction,
    params: &OdeParams,
    offsets: &[f64],
    x_offset: &[f64],
    eps: f64,
    settings: &ProbeSettings,
) -> Result<Vec<(ProbeRow, Trace)>> {
    check_dim(f.dim(), x_offset.len())?;
    if offsets.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid(
            "offsets",
            "initial times must be strictly increasing",
        ));
    }
    let xstar = f.require_xstar()?;
    let x0 = shifted(xstar, x_offset);
    let v0 = vec![0.0; f.dim()];
    offsets
        .iter()
        .map(|&t0| {
            let p = OdeParams { t0, ..*params };
            let ode = NominalOde::new(f.clone(), p, Representation::Velocity)?;
            let z0 = ode.initial_state(&x0, &v0);
            let cfg = settings.config(settings.horizon_scale * t0 + settings.horizon_offset);
            let trace = simulate(&ode, &z0, &cfg, None)?;
            let row = ProbeRow {
                start: t0,
                time_to_eps: time_to_epsilon(&trace, f, eps)?.map(|t| t.t),
            };
            Ok((row, trace))
        })
        .collect()
}

/// Runs HAND-1 from `(x* + x_offset, x* + x_offset, tau0)` for each clock
/// phase `tau0` and measures the time to reach `f~ <= eps`.
pub fn hand1_phase_probe(
    f: &CostFunction,
    params: &HandParams,
    phases: &[f64],
    x_offset: &[f64],
    eps: f64,
    settings: &ProbeSettings,
) -> Result<Vec<ProbeRow>> {
    Ok(
        hand1_phase_runs(f, params, phases, x_offset, eps, settings)?
            .into_iter()
            .map(|(row, _)| row)
            .collect(),
    )
}

/// [`hand1_phase_probe`], keeping the simulated traces.
pub fn hand1_phase_runs(
    f: &CostFunction,
    params: &HandParams,
    phases: &[f64],
    x_offset: &[f64],
    eps: f64,
    settings: &ProbeSettings,
) -> Result<Vec<(ProbeRow, Trace)>> {
    check_dim(f.dim(), x_offset.len())?;
    let hand = hand1(f.clone(), *params)?;
    let x0 = shifted(f.require_xstar()?, x_offset);
    let cfg = settings.config(settings.hand_horizon);
    phases
        .iter()
        .map(|&tau0| {
            let z0 = HybridState::new(&x0, &x0, tau0);
            let trace = simulate(&hand, &z0, &cfg, None)?;
            let row = ProbeRow {
                start: tau0,
                time_to_eps: time_to_epsilon(&trace, f, eps)?.map(|t| t.t),
            };
            Ok((row, trace))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestartSample {
    pub delta_t: f64,
    /// Flow time of the first period end after which `f~ <= eps` for good.
    pub time_to_eps: Option<f64>,
    pub jumps: usize,
}

/// HAND-2 runs from `(x0, x0, T_min)` with `T_max = T_min + ΔT` for every
/// `ΔT` in `delta_ts`, sampled at period ends.
pub fn restart_sweep(
    f: &CostFunction,
    c: f64,
    t_min: f64,
    x0: &[f64],
    delta_ts: &[f64],
    eps: f64,
    base: &SolverConfig,
) -> Result<Vec<RestartSample>> {
    Ok(restart_runs(f, c, t_min, x0, delta_ts, eps, base)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

/// [`restart_sweep`], keeping the simulated traces.
pub fn restart_runs(
    f: &CostFunction,
    c: f64,
    t_min: f64,
    x0: &[f64],
    delta_ts: &[f64],
    eps: f64,
    base: &SolverConfig,
) -> Result<Vec<(RestartSample, Trace)>> {
    check_dim(f.dim(), x0.len())?;
    delta_ts
        .iter()
        .map(|&dt| {
            let hand = hand2(f.clone(), HandParams::hand2(t_min, t_min + dt, c))?;
            let trace = simulate(&hand, &hand.rest_state(x0), base, None)?;
            let sample = RestartSample {
                delta_t: dt,
                time_to_eps: time_to_epsilon_period_ends(&trace, f, eps)?.map(|t| t.t),
                jumps: trace.events.len(),
            };
            Ok((sample, trace))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderSample {
    pub h: f64,
    pub error: f64,
}

/// Global error after `duration` seconds of pure flow from `z0`, for each
/// step size in `hs`, against an RK4 reference at `h / ref_divisor`.
pub fn order_study<S: HybridSystem + ?Sized>(
    sys: &S,
    z0: &HybridState,
    duration: f64,
    hs: &[f64],
    integrator: Integrator,
    ref_divisor: u32,
) -> Result<Vec<OrderSample>> {
    let flow = SystemFlow(sys);
    let tab = integrator.tableau();
    let rk4 = ButcherTableau::rk4();
    hs.iter()
        .map(|&h| {
            let n = (duration / h).round();
            if (n * h - duration).abs() > 1e-9 * duration {
                return Err(invalid(
                    "h",
                    format!("{h} does not divide the duration {duration}"),
                ));
            }
            let run = |tab: &ButcherTableau, h: f64, n: u64| {
                integrate_flow(&flow, z0, h, n, tab)
                    .map_err(|e| Error::Precondition(format!("flow fault: {}", e.message)))
            };
            let coarse = run(&tab, h, n as u64)?;
            let fine = run(&rk4, h / ref_divisor as f64, n as u64 * ref_divisor as u64)?;
            Ok(OrderSample {
                h,
                error: crate::dist(coarse.as_slice(), fine.as_slice()),
            })
        })
        .collect()
}

/// Least-squares slope of `ln(error)` against `ln(h)`.
pub fn fit_order(samples: &[OrderSample]) -> f64 {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.error > 0.0)
        .map(|s| (s.h.ln(), s.error.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Largest `defect(z, h) / h` over the given states and step sizes, where
/// `defect = |F_h(z) - z - h F(z)| / h`; the fitted `K` in `defect <= K h`.
pub fn regularity_constant<S: HybridSystem + ?Sized>(
    sys: &S,
    tableau: &ButcherTableau,
    states: &[HybridState],
    hs: &[f64],
) -> Result<f64> {
    let flow = SystemFlow(sys);
    let mut k: f64 = 0.0;
    for z in states {
        for &h in hs {
            let d = regularity_defect(&flow, z, h, tableau)
                .map_err(|e| Error::Precondition(e.message))?;
            k = k.max(d / h);
        }
    }
    Ok(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessSettings {
    pub solver: SolverConfig,
    /// Samples after this flow time must stay within `radius` of the target set.
    pub settle_time: f64,
    pub radius: f64,
    pub seed: u64,
    /// Hold interval of the random disturbances (seconds).
    pub hold: f64,
}

/// Simulates `hand` from `z0` with uniformly random state (`e1`), dynamics
/// (`e2`) and jump-argument (`e4`) disturbances of amplitude `eps`.
pub fn robustness_run(
    hand: &Hand,
    z0: &HybridState,
    eps: f64,
    settings: &RobustnessSettings,
) -> Result<Trace> {
    let len = hand.state_len();
    let noise = |k: u64| {
        DisturbanceSpec::uniform_random(eps, settings.seed.wrapping_add(k), settings.hold, len)
    };
    let pert = PerturbationSet::zero(len)
        .with_state_noise(noise(0)?)
        .with_dynamics_noise(noise(1)?)
        .with_jump_state_noise(noise(2)?);
    simulate(hand, z0, &settings.solver, Some(&pert))
}

/// One [`robustness_run`]. Succeeds if the run does not fault and ends up
/// (after `settle_time`) within `radius` of the target set.
pub fn robustness_trial(
    hand: &Hand,
    z0: &HybridState,
    eps: f64,
    settings: &RobustnessSettings,
) -> Result<bool> {
    let trace = robustness_run(hand, z0, eps, settings)?;
    if trace.is_faulted() {
        return Ok(false);
    }
    let xstar = hand.cost().require_xstar()?;
    let settled = trace
        .samples()
        .filter(|p| p.time.t >= settings.settle_time)
        .all(|p| target_distance(&p.state, xstar, hand.params()) <= settings.radius);
    Ok(settled)
}

/// Geometric bisection for the largest `eps` in `[lo, hi]` where `pass(eps)`
/// holds, assuming it holds below some threshold and fails above it.
/// Returns `hi` if `pass(hi)`, and `0` if `!pass(lo)`.
pub fn bisect_margin<P>(
    mut pass: P,
    lo: f64,
    hi: f64,
    iters: usize,
) -> Result<(f64, Vec<(f64, bool)>)>
where
    P: FnMut(f64) -> Result<bool>,
{
    if !(lo > 0.0 && lo < hi) {
        return Err(invalid(
            "lo",
            format!("need 0 < lo < hi, got lo={lo}, hi={hi}"),
        ));
    }
    let mut trials = Vec::new();
    let hi_ok = pass(hi)?;
    trials.push((hi, hi_ok));
    if hi_ok {
        return Ok((hi, trials));
    }
    let lo_ok = pass(lo)?;
    trials.push((lo, lo_ok));
    if !lo_ok {
        return Ok((0.0, trials));
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..iters {
        let mid = (a * b).sqrt();
        let ok = pass(mid)?;
        trials.push((mid, ok));
        if ok {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok((a, trials))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    /// Largest amplitude that passed.
    pub eps_star: f64,
    pub h: f64,
    pub horizon: f64,
    pub trials: Vec<(f64, bool)>,
}

pub fn robustness_margin(
    hand: &Hand,
    z0: &HybridState,
    settings: &RobustnessSettings,
    lo: f64,
    hi: f64,
    iters: usize,
) -> Result<MarginReport> {
    let (eps_star, trials) = bisect_margin(
        |eps| robustness_trial(hand, z0, eps, settings),
        lo,
        hi,
        iters,
    )?;
    Ok(MarginReport {
        eps_star,
        h: settings.solver.h,
        horizon: settings.solver.t_end,
        trials,
    })
}
