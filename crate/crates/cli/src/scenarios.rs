//! The canned experiments.
//!
//! Each scenario simulates its runs, writes one CSV per run into the output
//! directory and returns the bound-check results plus scenario-specific
//! constants and data for the summary.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use hand_core::analysis::{
    beta_for_trace, check_jump_identities, check_monotonicity, check_thm1_rate, check_thm2_rate,
    fit_order, hand1_phase_runs, lemma1_time_estimate, optimal_restart, order_study,
    period_contractions_above, restart_runs, robustness_margin, robustness_run, thm2_constants,
    uniformity_runs, ProbeSettings, RobustnessSettings,
};
use hand_core::dynamics::{limiting_integral, NominalOde, Representation};
use hand_core::hands::{target_distance, validate_dwell};
use hand_core::{
    simulate, CostFunction, Hand, HandKind, Integrator, PerturbationSet, SolverConfig, TableauId,
    Trace,
};
use serde_json::{json, Value};

use crate::artifacts::{ArtifactSink, CheckResult, Monitor, SystemTag};
use crate::config::{ScenarioId, ScenarioSpec};

/// What a scenario hands back for the summary.
#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<CheckResult>,
    pub constants: BTreeMap<String, Value>,
    pub data: BTreeMap<String, Value>,
}

struct Ctx<'a> {
    spec: &'a ScenarioSpec,
    costs: Vec<CostFunction>,
    names: Vec<String>,
    sink: &'a mut ArtifactSink,
    out: Outcome,
}

impl Ctx<'_> {
    fn check(&mut self, c: CheckResult) {
        log::debug!("{}: {}", c.name, if c.passed { "pass" } else { "FAIL" });
        self.out.checks.push(c);
    }

    fn x0(&self, i: usize) -> Vec<f64> {
        self.costs[i]
            .xstar()
            .expect("validated")
            .iter()
            .map(|v| v + self.spec.x_offset)
            .collect()
    }

    fn hand(&self, i: usize) -> Result<Hand> {
        Ok(Hand::new(
            self.spec.hand_kind,
            self.costs[i].clone(),
            self.spec.hand,
        )?)
    }

    fn perturbation(&self, i: usize) -> Result<Option<PerturbationSet>> {
        let n = self.costs[i].dim();
        Ok(self
            .spec
            .disturbance
            .build(n, self.spec.seed)?
            .map(|e2| PerturbationSet::zero(2 * n + 1).with_dynamics_noise(e2)))
    }

    fn record_hand(&mut self, name: &str, i: usize, hand: &Hand, trace: &Trace) -> Result<()> {
        let monitor = Monitor::hand(&self.costs[i], *hand.params())?;
        self.sink.record(
            name,
            SystemTag::hand(hand.kind()),
            &self.costs[i],
            i,
            Some(*hand.params()),
            None,
            trace,
            &monitor,
        )?;
        Ok(())
    }

    fn record_nominal(
        &mut self,
        name: &str,
        i: usize,
        ode: &NominalOde,
        trace: &Trace,
    ) -> Result<()> {
        let rep = ode.representation();
        let monitor = Monitor::nominal(&self.costs[i], ode.params(), rep)?;
        self.sink.record(
            name,
            SystemTag::nominal(rep),
            &self.costs[i],
            i,
            None,
            Some(*ode.params()),
            trace,
            &monitor,
        )?;
        Ok(())
    }

    /// `slack_factor * L * h`.
    fn slack(&self, i: usize, h: f64) -> f64 {
        self.spec.experiment.slack_factor * self.costs[i].lipschitz().expect("validated") * h
    }
}

/// Cost names, made unique by appending the index when labels repeat.
fn cost_names(costs: &[CostFunction]) -> Vec<String> {
    costs
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let dup = costs.iter().filter(|g| g.label() == f.label()).count() > 1;
            if dup {
                format!("{}-{i}", f.label())
            } else {
                f.label().to_string()
            }
        })
        .collect()
}

pub fn run(spec: &ScenarioSpec, sink: &mut ArtifactSink) -> Result<Outcome> {
    let costs = spec.build_costs();
    let names = cost_names(&costs);
    let mut ctx = Ctx {
        spec,
        costs,
        names,
        sink,
        out: Outcome::default(),
    };
    match spec.scenario {
        ScenarioId::Instability => instability(&mut ctx)?,
        ScenarioId::UniformityProbe => uniformity(&mut ctx)?,
        ScenarioId::Hand1Rate | ScenarioId::Hand2Rate => {
            for i in 0..ctx.costs.len() {
                rate_checks(&mut ctx, i, &spec.solver, "")?;
            }
        }
        ScenarioId::RestartSweep => restart(&mut ctx)?,
        ScenarioId::DiscretizationOrder => discretization(&mut ctx)?,
        ScenarioId::RobustnessMargin => robustness(&mut ctx)?,
    }
    Ok(ctx.out)
}

fn max_deviation(trace: &Trace, xstar: &[f64]) -> f64 {
    trace
        .samples()
        .map(|p| {
            p.state
                .x1()
                .iter()
                .zip(xstar)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Nominal ODE in both forms against HAND under the same disturbance: the
/// nominal runs must diverge and the HAND run must stay near the target.
fn instability(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.spec;
    let x = &spec.experiment;
    for i in 0..ctx.costs.len() {
        let f = ctx.costs[i].clone();
        let name = ctx.names[i].clone();
        let xstar = f.require_xstar()?.to_vec();
        let x0 = ctx.x0(i);
        let d0 = xstar
            .iter()
            .zip(&x0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let pert = ctx.perturbation(i)?;
        for (rep, label) in [
            (Representation::Velocity, "velocity"),
            (Representation::Momentum, "momentum"),
        ] {
            let ode = NominalOde::new(f.clone(), spec.ode, rep)?;
            let z0 = ode.initial_state(&x0, &vec![0.0; f.dim()]);
            let trace = simulate(&ode, &z0, &spec.solver, pert.as_ref())?;
            ctx.record_nominal(&format!("nominal-{label}-{name}"), i, &ode, &trace)?;
            let dev = max_deviation(&trace, &xstar);
            let growth = dev / d0;
            let passed = trace.is_blow_up() || growth >= x.growth_factor;
            let end = trace.last().map_or(0.0, |p| p.time.t);
            ctx.check(CheckResult {
                name: format!("nominal_{label}_diverges[{name}]"),
                passed,
                value: Some(growth),
                limit: Some(x.growth_factor),
                detail: format!(
                    "termination {} at t = {end}; max |x1 - x*| / |x1(0) - x*| = {growth:e}",
                    trace.termination.label()
                ),
            });
        }
        let hand = ctx.hand(i)?;
        let trace = simulate(&hand, &hand.rest_state(&x0), &spec.solver, pert.as_ref())?;
        ctx.record_hand(
            &format!("{}-{name}", kind_slug(hand.kind())),
            i,
            &hand,
            &trace,
        )?;
        let late = trace
            .samples()
            .filter(|p| p.time.t >= x.settle_time)
            .map(|p| target_distance(&p.state, &xstar, hand.params()))
            .fold(0.0, f64::max);
        let faulted = trace.is_faulted();
        let mut c =
            CheckResult::at_most(format!("hand_bounded[{name}]"), late, x.distance_threshold);
        c.passed &= !faulted;
        c.detail = format!(
            "max target distance for t >= {} is {late:e} (limit {}); termination {}",
            x.settle_time,
            x.distance_threshold,
            trace.termination.label()
        );
        ctx.check(c);
    }
    Ok(())
}

fn kind_slug(kind: HandKind) -> &'static str {
    match kind {
        HandKind::Hand1 => "hand1",
        HandKind::Hand2 => "hand2",
    }
}

fn uniformity(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.spec;
    let x = &spec.experiment;
    let settings = ProbeSettings {
        h: spec.solver.h,
        integrator: spec.solver.integrator,
        record_stride: spec.solver.record_stride,
        horizon_scale: x.horizon_scale,
        horizon_offset: x.horizon_offset,
        hand_horizon: x.hand_horizon,
    };
    for i in 0..ctx.costs.len() {
        let f = ctx.costs[i].clone();
        let name = ctx.names[i].clone();
        let offset = vec![spec.x_offset; f.dim()];

        let nominal = uniformity_runs(&f, &spec.ode, &x.t0_values, &offset, x.eps, &settings)?;
        let mut times = Vec::new();
        for (row, trace) in &nominal {
            let ode = NominalOde::new(
                f.clone(),
                hand_core::dynamics::OdeParams {
                    t0: row.start,
                    ..spec.ode
                },
                Representation::Velocity,
            )?;
            ctx.record_nominal(&format!("nominal-{name}-t0={}", row.start), i, &ode, trace)?;
            times.push(row.time_to_eps);
        }
        let increasing = times.iter().all(Option::is_some) && times.windows(2).all(|w| w[0] < w[1]);
        ctx.check(CheckResult::new(
            format!("nominal_settling_time_increases[{name}]"),
            increasing,
            format!("time to eps for t0 = {:?}: {times:?}", x.t0_values),
        ));

        let hand = ctx.hand(i)?;
        let phased = hand1_phase_runs(&f, &spec.hand, &x.phases, &offset, x.eps, &settings)?;
        let mut phase_times = Vec::new();
        for (row, trace) in &phased {
            ctx.record_hand(&format!("hand1-{name}-tau0={}", row.start), i, &hand, trace)?;
            phase_times.push(row.time_to_eps);
        }
        let settled: Vec<f64> = phase_times.iter().flatten().copied().collect();
        let (lo, hi) = settled.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), t| {
            (lo.min(*t), hi.max(*t))
        });
        let ratio = if settled.len() == phase_times.len() && lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        };
        ctx.check(
            CheckResult::at_most(format!("hand1_phase_ratio[{name}]"), ratio, x.ratio_limit)
                .with_detail(format!(
                    "time to eps for tau0 = {:?}: {phase_times:?}; max/min = {ratio}",
                    x.phases
                )),
        );
        ctx.out.data.insert(
            format!("probe[{name}]"),
            json!({
                "nominal": nominal.iter().map(|(r, _)| r).collect::<Vec<_>>(),
                "hand1": phased.iter().map(|(r, _)| r).collect::<Vec<_>>(),
            }),
        );
    }

    let ell = spec.ode.ell;
    let vals: Vec<f64> = x
        .limit_points
        .iter()
        .map(|&s| limiting_integral(ell, s, x.limit_window))
        .collect();
    ctx.check(CheckResult::new(
        "limiting_integral_decreases",
        vals.windows(2).all(|w| w[1] < w[0]),
        format!("integrals at s = {:?}: {vals:?}", x.limit_points),
    ));
    let last = *vals.last().expect("validated non-empty");
    ctx.check(CheckResult::at_most(
        "limiting_integral_final",
        last,
        x.limit_factor * ell,
    ));
    ctx.out.data.insert(
        "limiting_integral".into(),
        json!({"ell": ell, "window": x.limit_window, "points": x.limit_points, "values": vals}),
    );
    Ok(())
}

/// Rate, monotonicity, jump-identity and stationarity checks for one cost.
/// Returns whether all of them passed.
fn rate_checks(ctx: &mut Ctx, i: usize, solver: &SolverConfig, suffix: &str) -> Result<bool> {
    let spec = ctx.spec;
    let x = &spec.experiment;
    let f = ctx.costs[i].clone();
    let name = format!("{}{suffix}", ctx.names[i]);
    let hand = ctx.hand(i)?;
    let params = *hand.params();
    let h = solver.h;
    let slack = ctx.slack(i, h);
    let tol = 1e-6 + slack;
    let first = ctx.out.checks.len();
    let pert = ctx.perturbation(i)?;

    let x0 = ctx.x0(i);
    let trace = simulate(&hand, &hand.rest_state(&x0), solver, pert.as_ref())?;
    let slug = kind_slug(hand.kind());
    ctx.record_hand(&format!("{slug}-{name}"), i, &hand, &trace)?;
    ctx.check(CheckResult::new(
        format!("no_fault[{name}]"),
        !trace.is_faulted(),
        format!("termination {}", trace.termination.label()),
    ));

    let mut constants = serde_json::Map::new();
    match hand.kind() {
        HandKind::Hand1 => {
            let beta = beta_for_trace(&trace, &f, &params)?;
            constants.insert("beta".into(), json!(beta));
            let r = check_thm1_rate(&trace, &f, &params, beta, tol)?;
            ctx.check(CheckResult {
                name: format!("thm1_rate[{name}]"),
                passed: r.satisfied,
                value: Some(r.worst_margin),
                limit: Some(-tol),
                detail: format!(
                    "f~ <= beta/tau^2 + {tol:e} on {} samples of the first flow; worst margin {:e}, {} violations",
                    r.checked, r.worst_margin, r.violations
                ),
            });
        }
        HandKind::Hand2 => {
            let k = thm2_constants(&f, &params)?;
            constants.insert("thm2".into(), serde_json::to_value(k)?);
            let mu = f.require_mu()?;
            let dwell = validate_dwell(&params, mu);
            constants.insert("dwell_condition".into(), json!(dwell));
            if dwell {
                let r = check_thm2_rate(&trace, &hand, tol)?;
                ctx.check(CheckResult {
                    name: format!("thm2_rate[{name}]"),
                    passed: r.satisfied,
                    value: Some(r.worst_margin),
                    limit: Some(-tol),
                    detail: format!(
                        "exponential bound + {tol:e} on {} samples; worst margin {:e}, {} violations",
                        r.checked, r.worst_margin, r.violations
                    ),
                });
            } else {
                ctx.check(CheckResult::new(
                    format!("thm2_rate[{name}]"),
                    false,
                    "dwell condition t_max^2 - t_min^2 > 1/(mu c) does not hold",
                ));
            }
            let floor = x.gap_floor * f.require_fstar()?.abs().max(1.0);
            let ratios = period_contractions_above(&trace, &f, floor)?;
            let worst = ratios.iter().copied().fold(0.0, f64::max);
            ctx.check(
                CheckResult::at_most(
                    format!("period_contraction[{name}]"),
                    worst,
                    k.k0 + x.contraction_slack,
                )
                .with_detail(format!(
                    "max f~(end)/f~(start) over {} periods starting above {floor:e} is {worst:e}; k0 = {}",
                    ratios.len(),
                    k.k0
                )),
            );
        }
    }
    ctx.out
        .constants
        .insert(format!("{slug}[{name}]"), Value::Object(constants));

    let mono = check_monotonicity(&trace, &f, params.c, slack)?;
    ctx.check(CheckResult {
        name: format!("lyapunov_monotone[{name}]"),
        passed: mono.satisfied,
        value: Some(mono.worst_margin),
        limit: Some(0.0),
        detail: format!(
            "flow slack {slack:e} per step, jumps exact; {} pairs checked, {} violations",
            mono.checked, mono.violations
        ),
    });
    let ids = check_jump_identities(&trace, &hand)?;
    ctx.check(
        CheckResult::at_most(
            format!("jump_identities[{name}]"),
            ids.max_rel_error,
            x.identity_tol,
        )
        .with_detail(format!(
            "max relative error {:e} over {} jumps",
            ids.max_rel_error, ids.jumps
        )),
    );

    let xstar = f.require_xstar()?.to_vec();
    let rest = simulate(&hand, &hand.rest_state(&xstar), solver, None)?;
    ctx.record_hand(&format!("{slug}-{name}-stationary"), i, &hand, &rest)?;
    let drift = rest
        .samples()
        .map(|p| target_distance(&p.state, &xstar, &params))
        .fold(0.0, f64::max);
    let mut c = CheckResult::at_most(format!("stationarity[{name}]"), drift, slack);
    c.passed &= !rest.is_faulted();
    ctx.check(c);

    Ok(ctx.out.checks[first..].iter().all(|c| c.passed))
}

fn restart(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.spec;
    let x = &spec.experiment;
    let (c, t_min) = (spec.hand.c, spec.hand.t_min);
    for i in 0..ctx.costs.len() {
        let f = ctx.costs[i].clone();
        let name = ctx.names[i].clone();
        let mu = f.require_mu()?;
        let dt_star = optimal_restart(c, mu, t_min);
        let grid = x.restart_grid.points(dt_star);
        let x0 = ctx.x0(i);
        let runs = restart_runs(&f, c, t_min, &x0, &grid, x.eps, &spec.solver)?;
        for (k, (s, trace)) in runs.iter().enumerate() {
            let hand = hand_core::hand2(
                f.clone(),
                hand_core::HandParams::hand2(t_min, t_min + s.delta_t, c),
            )?;
            ctx.record_hand(&format!("restart-{name}-{k:02}"), i, &hand, trace)?;
        }
        let samples: Vec<_> = runs.iter().map(|(s, _)| *s).collect();
        let star_idx = nearest_log(&grid, dt_star);
        let best = samples
            .iter()
            .enumerate()
            .filter_map(|(k, s)| s.time_to_eps.map(|t| (k, t)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let gap0 = f.suboptimality(&x0)?;
        let t_eps = lemma1_time_estimate(c, mu, t_min, gap0, x.eps);
        ctx.out.constants.insert(
            format!("restart[{name}]"),
            json!({"delta_t_star": dt_star, "delta_t_star_index": star_idx, "t_eps": t_eps, "f_gap0": gap0}),
        );
        ctx.out.data.insert(
            format!("restart_sweep[{name}]"),
            serde_json::to_value(&samples)?,
        );
        match best {
            Some((k, t)) => {
                let off = k.abs_diff(star_idx);
                ctx.check(CheckResult {
                    name: format!("restart_argmin_adjacent[{name}]"),
                    passed: off <= 1,
                    value: Some(off as f64),
                    limit: Some(1.0),
                    detail: format!(
                        "fastest settling at grid index {k} (delta_t = {:.4}, {t} s); delta_t* = {dt_star:.4} is index {star_idx}",
                        grid[k]
                    ),
                });
                let ratio = (t / t_eps).max(t_eps / t);
                ctx.check(
                    CheckResult::at_most(
                        format!("restart_time_vs_estimate[{name}]"),
                        ratio,
                        x.estimate_factor,
                    )
                    .with_detail(format!(
                        "measured optimum {t} s vs estimate t_eps = {t_eps} s (ratio {ratio})"
                    )),
                );
            }
            None => {
                ctx.check(CheckResult::new(
                    format!("restart_argmin_adjacent[{name}]"),
                    false,
                    "no run reached eps within the horizon",
                ));
                ctx.check(CheckResult::new(
                    format!("restart_time_vs_estimate[{name}]"),
                    false,
                    "no run reached eps within the horizon",
                ));
            }
        }
    }
    Ok(())
}

fn nearest_log(grid: &[f64], target: f64) -> usize {
    grid.iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1.ln() - target.ln())
                .abs()
                .total_cmp(&(b.1.ln() - target.ln()).abs())
        })
        .map_or(0, |(k, _)| k)
}

fn discretization(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.spec;
    let x = &spec.experiment;
    let rk4 = Integrator::RungeKutta(TableauId::Rk4);
    let mut hs = x.step_sizes.clone();
    hs.sort_by(|a, b| b.total_cmp(a));
    for i in 0..ctx.costs.len() {
        let name = ctx.names[i].clone();
        let hand = ctx.hand(i)?;
        let z0 = hand.rest_state(&ctx.x0(i));
        let duration = spec.hand.delta_t();
        for (integ, target, tol) in [
            (Integrator::Euler, 1.0, x.euler_order_tol),
            (rk4, 4.0, x.rk4_order_tol),
        ] {
            let samples = order_study(&hand, &z0, duration, &hs, integ, x.ref_divisor)?;
            let order = fit_order(&samples);
            ctx.check(CheckResult {
                name: format!("order_{integ}[{name}]"),
                passed: (order - target).abs() <= tol,
                value: Some(order),
                limit: Some(tol),
                detail: format!("fitted order {order:.4}, expected {target} +/- {tol}"),
            });
            ctx.out.data.insert(
                format!("order_{integ}[{name}]"),
                json!({"order": order, "samples": samples}),
            );
        }

        for integ in [Integrator::Euler, rk4] {
            let mut passes = Vec::new();
            for &h in &hs {
                let solver = SolverConfig {
                    h,
                    integrator: integ,
                    ..spec.solver.clone()
                };
                let ok = rate_checks(ctx, i, &solver, &format!("-{integ}-h={h}"))?;
                passes.push((h, ok));
            }
            let h_star = passes.iter().find(|p| p.1).map(|p| p.0);
            let below_ok = h_star.is_some_and(|hs| passes.iter().all(|&(h, ok)| h > hs || ok));
            ctx.check(CheckResult {
                name: format!("practical_stability_{integ}[{name}]"),
                passed: below_ok,
                value: h_star,
                limit: None,
                detail: format!("largest passing h = {h_star:?}; per-h results {passes:?}"),
            });
            ctx.out.data.insert(
                format!("step_size_checks_{integ}[{name}]"),
                json!(passes
                    .iter()
                    .map(|(h, ok)| json!({"h": h, "passed": ok}))
                    .collect::<Vec<_>>()),
            );
        }
    }
    Ok(())
}

fn robustness(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.spec;
    let x = &spec.experiment;
    for i in 0..ctx.costs.len() {
        let name = ctx.names[i].clone();
        let hand = ctx.hand(i)?;
        let z0 = hand.rest_state(&ctx.x0(i));
        let mut reports = Vec::new();
        for &h in &x.margin.step_sizes {
            let settings = RobustnessSettings {
                solver: SolverConfig {
                    h,
                    ..spec.solver.clone()
                },
                settle_time: x.settle_time,
                radius: x.margin.radius,
                seed: spec.seed,
                hold: x.margin.hold,
            };
            let report = robustness_margin(
                &hand,
                &z0,
                &settings,
                x.margin.lo,
                x.margin.hi,
                x.margin.iters,
            )
            .with_context(|| format!("robustness margin at h = {h}"))?;
            if report.eps_star > 0.0 {
                let trace = robustness_run(&hand, &z0, report.eps_star, &settings)?;
                ctx.record_hand(
                    &format!("{}-{name}-h={h}-margin", kind_slug(hand.kind())),
                    i,
                    &hand,
                    &trace,
                )?;
            }
            ctx.check(CheckResult {
                name: format!("robustness_margin[{name}, h={h}]"),
                passed: report.eps_star > 0.0,
                value: Some(report.eps_star),
                limit: Some(0.0),
                detail: format!(
                    "largest passing amplitude {:e} at h = {h}, horizon {} s ({} trials)",
                    report.eps_star,
                    report.horizon,
                    report.trials.len()
                ),
            });
            reports.push(report);
        }
        ctx.out
            .data
            .insert(format!("margin[{name}]"), serde_json::to_value(&reports)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_log_picks_center() {
        let g = [1.0, 2.0, 4.0, 8.0];
        assert_eq!(nearest_log(&g, 3.9), 2);
        assert_eq!(nearest_log(&g, 0.1), 0);
    }

    #[test]
    fn duplicate_labels_get_index() {
        let costs = vec![
            hand_core::cost::corpus::half_square(1),
            hand_core::cost::corpus::half_square(1),
            hand_core::cost::corpus::diag_1_4(),
        ];
        assert_eq!(
            cost_names(&costs),
            vec!["half-square-1-0", "half-square-1-1", "diag-1-4"]
        );
    }
}
