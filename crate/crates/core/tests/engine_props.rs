use hand_core::cost::corpus;
use hand_core::dynamics::{hand_flow_into, NominalOde, OdeParams, Representation};
use hand_core::engine::{
    dh_membership, euler_step, integrate_flow, regularity_defect, rk_step, ButcherTableau,
    Provenance, SystemFlow,
};
use hand_core::trace::{FaultKind, PointKind};
use hand_core::{
    hand1, hand2, simulate, CostFunction, DisturbanceSpec, Hand, HandParams, HybridState,
    HybridSystem, Integrator, JumpPolicy, PerturbationSet, SolverConfig, Termination, Trace,
};
use proptest::prelude::*;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn offset_rest(hand: &Hand, shift: f64) -> HybridState {
    let x0: Vec<f64> = hand
        .cost()
        .xstar()
        .unwrap()
        .iter()
        .map(|v| v + shift)
        .collect();
    hand.rest_state(&x0)
}

fn pre_jump_clocks(trace: &Trace) -> Vec<f64> {
    trace.events.iter().map(|e| e.pre.tau()).collect()
}

#[test]
fn euler_step_on_hand_flow() {
    let f = corpus::half_square(1);
    let flow = |z: &[f64], dz: &mut [f64]| hand_flow_into(z, 1.0, 2.0, &f, dz);
    let z = HybridState::new(&[1.0], &[3.0], 2.0);
    let out = euler_step(&flow, &z, 0.1).unwrap();
    // F(z) = ((2/2)(3 - 1), -2 * 2 * 1, 1) = (2, -4, 1)
    let expected = [1.2, 2.6, 2.1];
    assert!(max_abs_diff(out.as_slice(), &expected) < 1e-15);
}

#[test]
fn half_steps_on_linear_field() {
    // z' = A z (the third coordinate is frozen). One Euler step of h and two
    // of h/2 differ by exactly (h^2/4) A^2 z.
    let a = [[0.0, 1.0], [-2.0, -0.5]];
    let lin = move |z: &[f64], dz: &mut [f64]| {
        dz[0] = a[0][0] * z[0] + a[0][1] * z[1];
        dz[1] = a[1][0] * z[0] + a[1][1] * z[1];
        dz[2] = 0.0;
        Ok(())
    };
    let z = HybridState::from_flat(vec![0.8, -1.3, 1.0]);
    let a2z = {
        let az = [
            a[0][0] * 0.8 + a[0][1] * -1.3,
            a[1][0] * 0.8 + a[1][1] * -1.3,
        ];
        [
            a[0][0] * az[0] + a[0][1] * az[1],
            a[1][0] * az[0] + a[1][1] * az[1],
        ]
    };
    for h in [0.2, 0.1, 0.05, 0.025] {
        let one = euler_step(&lin, &z, h).unwrap();
        let half = euler_step(&lin, &z, 0.5 * h).unwrap();
        let two = euler_step(&lin, &half, 0.5 * h).unwrap();
        #[allow(clippy::needless_range_loop)]
        for i in 0..2 {
            let diff = two.as_slice()[i] - one.as_slice()[i];
            assert!((diff - 0.25 * h * h * a2z[i]).abs() < 1e-14);
        }
    }
}

fn rk4_error_on_hand2_period(h: f64) -> f64 {
    let f = corpus::diag_1_4();
    let hand = hand2(f, HandParams::hand2(1.0, 2.0, 1.0)).unwrap();
    let z0 = HybridState::new(&[5.0, -3.0], &[5.0, -3.0], 1.0);
    let tab = ButcherTableau::rk4();
    let n = (1.0 / h).round() as u64;
    let coarse = integrate_flow(&SystemFlow(&hand), &z0, h, n, &tab).unwrap();
    let fine = integrate_flow(&SystemFlow(&hand), &z0, h / 100.0, n * 100, &tab).unwrap();
    max_abs_diff(coarse.as_slice(), fine.as_slice())
}

#[test]
fn rk4_reference_error_is_fourth_order() {
    let e1 = rk4_error_on_hand2_period(0.05);
    let e2 = rk4_error_on_hand2_period(0.025);
    let order = (e1 / e2).log2();
    assert!((order - 4.0).abs() <= 0.8, "order {order}");
}

#[test]
fn hand2_jumps_once_per_period() {
    let f = corpus::half_square(2);
    let hand = hand2(f, HandParams::hand2(1.0, 2.0, 1.0)).unwrap();
    let h = 1e-3;
    let cfg = SolverConfig::new(h, 10.5)
        .with_integrator(Integrator::Euler)
        .with_stride(100);
    let trace = simulate(&hand, &offset_rest(&hand, 1.0), &cfg, None).unwrap();
    assert_eq!(trace.termination, Termination::Horizon);
    assert_eq!(trace.events.len(), 10);
    for (k, ev) in trace.events.iter().enumerate() {
        assert!((ev.time.t - (k + 1) as f64).abs() <= h, "{:?}", ev.time);
        assert_eq!(ev.time.j, k as u64);
        assert_eq!(ev.post.x1(), ev.post.x2());
        assert_eq!(ev.post.tau(), 1.0);
    }
    trace.check_well_formed().unwrap();
}

#[test]
fn traces_are_well_formed_and_jumps_close() {
    for f in corpus::bundled_corpus() {
        for (hand, policy) in [
            (
                hand1(f.clone(), HandParams::hand1(0.5, 1.5, 3.0, 1.0)).unwrap(),
                JumpPolicy::UniformRandom { seed: 3 },
            ),
            (
                hand1(f.clone(), HandParams::hand1(0.5, 1.5, 3.0, 1.0)).unwrap(),
                JumpPolicy::EarliestJump,
            ),
            (
                hand2(f.clone(), HandParams::hand2(1.0, 2.5, 1.0)).unwrap(),
                JumpPolicy::LatestJump,
            ),
        ] {
            let cfg = SolverConfig::new(1e-2, 30.0)
                .with_policy(policy)
                .with_stride(7);
            let trace = simulate(&hand, &offset_rest(&hand, 2.0), &cfg, None).unwrap();
            trace.check_well_formed().unwrap();
            assert!(!trace.events.is_empty());
            for ev in &trace.events {
                let z = ev.post.as_slice();
                assert!(hand.in_flow_set(z, 0.0) || hand.in_jump_set(z, 0.0));
                assert_eq!(ev.post.x1(), ev.pre.x1());
            }
            for w in trace.points.windows(2) {
                if w[1].kind == PointKind::Jump {
                    assert_eq!(w[0].time.t, w[1].time.t);
                    assert_eq!(w[0].time.j + 1, w[1].time.j);
                } else {
                    assert_eq!(w[0].time.j, w[1].time.j);
                }
            }
        }
    }
}

#[test]
fn identical_config_gives_identical_trace() {
    let f = corpus::coupled3();
    let hand = hand1(f, HandParams::hand1(1.0, 2.0, 4.0, 0.5)).unwrap();
    let cfg = SolverConfig::new(5e-3, 40.0).with_policy(JumpPolicy::UniformRandom { seed: 99 });
    let z0 = offset_rest(&hand, 1.5);
    let a = simulate(&hand, &z0, &cfg, None).unwrap();
    let b = simulate(&hand, &z0, &cfg, None).unwrap();
    assert_eq!(a, b);
    let other = cfg
        .clone()
        .with_policy(JumpPolicy::UniformRandom { seed: 100 });
    let c = simulate(&hand, &z0, &other, None).unwrap();
    assert_ne!(pre_jump_clocks(&a), pre_jump_clocks(&c));
}

#[test]
fn zero_perturbation_is_bitwise_nominal() {
    let f = corpus::diag_1_4();
    let hand = hand2(f, HandParams::hand2(1.0, 3.0, 1.0)).unwrap();
    let cfg = SolverConfig::new(1e-2, 20.0);
    let z0 = offset_rest(&hand, 1.0);
    let a = simulate(&hand, &z0, &cfg, None).unwrap();
    let pert = PerturbationSet::zero(hand.state_len());
    let b = simulate(&hand, &z0, &cfg, Some(&pert)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn uniform_random_resets_spread_over_window() {
    let f = corpus::half_square(1);
    let (t_med, t_max) = (2.0, 3.0);
    let hand = hand1(f, HandParams::hand1(1.0, t_med, t_max, 1.0)).unwrap();
    let h = 1e-3;
    let cfg = SolverConfig::new(h, 600.0)
        .with_policy(JumpPolicy::UniformRandom { seed: 7 })
        .with_stride(1000);
    let trace = simulate(&hand, &offset_rest(&hand, 1.0), &cfg, None).unwrap();
    let clocks = pre_jump_clocks(&trace);
    assert!(clocks.len() > 300);
    for &tau in &clocks {
        assert!(tau >= t_med - 1e-9 && tau <= t_max + h, "tau {tau}");
    }
    let mean = clocks.iter().sum::<f64>() / clocks.len() as f64;
    assert!((mean - 0.5 * (t_med + t_max)).abs() < 0.05, "mean {mean}");
    let low = clocks.iter().filter(|&&t| t < 2.5).count() as f64 / clocks.len() as f64;
    assert!((low - 0.5).abs() < 0.08, "lower half share {low}");
}

#[test]
fn latest_and_earliest_policies() {
    let f = corpus::half_square(1);
    let hand = hand1(f, HandParams::hand1(1.0, 2.0, 3.0, 1.0)).unwrap();
    let h = 1e-2;
    let z0 = offset_rest(&hand, 1.0);
    let latest = simulate(&hand, &z0, &SolverConfig::new(h, 20.0), None).unwrap();
    assert!(latest.events.len() >= 9);
    for tau in pre_jump_clocks(&latest) {
        assert!((tau - 3.0).abs() <= h, "latest reset at {tau}");
    }
    let cfg = SolverConfig::new(h, 20.0).with_policy(JumpPolicy::EarliestJump);
    let earliest = simulate(&hand, &z0, &cfg, None).unwrap();
    assert!(earliest.events.len() >= 19);
    for tau in pre_jump_clocks(&earliest) {
        assert!((tau - 2.0).abs() <= h, "earliest reset at {tau}");
    }
}

#[test]
fn policies_coincide_when_window_is_a_point() {
    let f = corpus::diag_1_4();
    let hand = hand1(f, HandParams::hand1(1.0, 3.0, 3.0, 1.0)).unwrap();
    let z0 = offset_rest(&hand, 1.0);
    let run = |policy| {
        let cfg = SolverConfig::new(1e-2, 25.0).with_policy(policy);
        simulate(&hand, &z0, &cfg, None).unwrap()
    };
    let latest = run(JumpPolicy::LatestJump);
    assert_eq!(latest.events.len(), 12);
    for (k, ev) in latest.events.iter().enumerate() {
        assert!((ev.time.t - 2.0 * (k + 1) as f64).abs() <= 1e-2);
    }
    for policy in [
        JumpPolicy::EarliestJump,
        JumpPolicy::UniformRandom { seed: 5 },
    ] {
        let other = run(policy);
        assert_eq!(latest.points, other.points);
        assert_eq!(latest.events, other.events);
    }
}

#[test]
fn regularity_constant_bounds_defect() {
    let tab = ButcherTableau::rk4();
    for f in corpus::bundled_corpus() {
        let hand = hand2(f.clone(), HandParams::hand2(1.0, 2.0, 1.0)).unwrap();
        let n = f.dim();
        let states: Vec<HybridState> = (0..50)
            .map(|i| {
                let s = (i as f64 * 0.37).sin() * 2.0;
                let x1: Vec<f64> = (0..n).map(|k| s + k as f64 * 0.3).collect();
                let x2: Vec<f64> = (0..n).map(|k| -s * 0.5 + k as f64).collect();
                HybridState::new(&x1, &x2, 1.0 + (i as f64 / 49.0))
            })
            .collect();
        let flow = SystemFlow(&hand);
        let h0 = 0.1;
        let k_fit = states
            .iter()
            .map(|z| regularity_defect(&flow, z, h0, &tab).unwrap() / h0)
            .fold(0.0, f64::max);
        assert!(k_fit > 0.0 && k_fit.is_finite());
        for h in [0.05, 0.02, 0.01, 0.001] {
            for z in &states {
                let rho = regularity_defect(&flow, z, h, &tab).unwrap();
                assert!(
                    rho <= 1.5 * k_fit * h,
                    "{}: rho={rho} K h={}",
                    f.label(),
                    k_fit * h
                );
                assert!(regularity_defect(&flow, z, h, &ButcherTableau::euler()).unwrap() < 1e-12);
            }
        }
    }
}

#[test]
fn overshoot_belongs_to_dh() {
    let f = corpus::half_square(1);
    let hand = hand2(f, HandParams::hand2(1.0, 2.0, 1.0)).unwrap();
    let over = HybridState::new(&[0.3], &[0.1], 2.003);
    assert!(!hand.in_flow_set(over.as_slice(), 0.0));
    assert!(!hand.in_jump_set(over.as_slice(), 0.0));
    assert!(dh_membership(&hand, over.as_slice(), Provenance::Flow));
    let at_d = HybridState::new(&[0.3], &[0.1], 2.0);
    for prov in [Provenance::Initial, Provenance::Flow, Provenance::Jump] {
        assert!(dh_membership(&hand, at_d.as_slice(), prov));
    }
    let interior = HybridState::new(&[0.3], &[0.1], 1.5);
    assert!(!dh_membership(&hand, interior.as_slice(), Provenance::Jump));
    assert!(!dh_membership(&hand, interior.as_slice(), Provenance::Flow));
}

#[test]
fn overshooting_step_triggers_jump() {
    // h = 0.3 from tau = 1 lands on 2.2 > T_max; the next iteration must jump.
    let f = corpus::half_square(1);
    let hand = hand2(f, HandParams::hand2(1.0, 2.0, 1.0)).unwrap();
    let cfg = SolverConfig::new(0.3, 3.0).with_integrator(Integrator::Euler);
    let trace = simulate(&hand, &offset_rest(&hand, 1.0), &cfg, None).unwrap();
    assert_eq!(trace.termination, Termination::Horizon);
    let first = &trace.events[0];
    assert!((first.pre.tau() - 2.2).abs() < 1e-12);
    assert!((first.time.t - 1.2).abs() < 1e-12);
}

#[test]
fn empty_jump_set_never_jumps() {
    let f = corpus::diag_1_4();
    let ode = NominalOde::new(
        f,
        OdeParams::new(2.0, 1.0, 3.0, 1.0).unwrap(),
        Representation::Momentum,
    )
    .unwrap();
    let z0 = ode.initial_state(&[1.0, 1.0], &[0.0, 0.0]);
    let trace = simulate(
        &ode,
        &z0,
        &SolverConfig::new(1e-2, 50.0).with_stride(10),
        None,
    )
    .unwrap();
    assert_eq!(trace.termination, Termination::Horizon);
    assert!(trace.events.is_empty());
    assert!(trace.points.iter().all(|p| p.time.j == 0));
}

#[test]
fn flow_between_jumps_is_bounded_below() {
    let h = 1e-2;
    for f in corpus::bundled_corpus() {
        let h1 = hand1(f.clone(), HandParams::hand1(1.0, 1.4, 3.0, 1.0)).unwrap();
        let h2 = hand2(f.clone(), HandParams::hand2(1.0, 2.5, 1.0)).unwrap();
        for policy in [
            JumpPolicy::EarliestJump,
            JumpPolicy::UniformRandom { seed: 1 },
        ] {
            let cfg = SolverConfig::new(h, 40.0)
                .with_policy(policy)
                .with_stride(50);
            let trace = simulate(&h1, &offset_rest(&h1, 1.0), &cfg, None).unwrap();
            for w in trace.events.windows(2) {
                assert!(w[1].time.t - w[0].time.t >= 0.4 - h);
            }
        }
        let cfg = SolverConfig::new(h, 40.0).with_stride(50);
        let trace = simulate(&h2, &offset_rest(&h2, 1.0), &cfg, None).unwrap();
        for w in trace.events.windows(2) {
            assert!((w[1].time.t - w[0].time.t - 1.5).abs() <= h);
        }
    }
}

#[test]
fn jump_cap_stops_run() {
    let f = corpus::half_square(1);
    let hand = hand2(f, HandParams::hand2(1.0, 2.0, 1.0)).unwrap();
    let mut cfg = SolverConfig::new(1e-2, 100.0);
    cfg.max_jumps = 3;
    let trace = simulate(&hand, &offset_rest(&hand, 1.0), &cfg, None).unwrap();
    assert_eq!(trace.termination, Termination::JumpCap);
    assert_eq!(trace.events.len(), 3);
    assert!((trace.last().unwrap().time.t - 4.0).abs() <= 1e-2);
}

#[test]
fn blow_up_is_a_faulted_trace() {
    struct Growth;
    impl HybridSystem for Growth {
        fn state_len(&self) -> usize {
            3
        }
        fn flow(&self, z: &[f64], dz: &mut [f64]) -> hand_core::Result<()> {
            dz[0] = 10.0 * z[0];
            dz[1] = 0.0;
            dz[2] = 1.0;
            Ok(())
        }
        fn jump(&self, z: &[f64], out: &mut [f64]) -> hand_core::Result<()> {
            out.copy_from_slice(z);
            Ok(())
        }
        fn in_flow_set(&self, _z: &[f64], _inflation: f64) -> bool {
            true
        }
        fn in_jump_set(&self, _z: &[f64], _inflation: f64) -> bool {
            false
        }
    }
    let mut cfg = SolverConfig::new(0.1, 100.0).with_integrator(Integrator::Euler);
    cfg.blowup_norm = 1e6;
    let trace = simulate(
        &Growth,
        &HybridState::from_flat(vec![1.0, 0.0, 0.0]),
        &cfg,
        None,
    )
    .unwrap();
    assert!(trace.is_blow_up());
    // 2^k exceeds 1e6 after 20 steps
    let last = trace.last().unwrap();
    assert_eq!(last.kind, PointKind::Fault);
    assert!((last.time.t - 2.0).abs() < 1e-12);
    assert!(matches!(
        trace.termination,
        Termination::Fault {
            kind: FaultKind::BlowUp,
            ..
        }
    ));
}

#[test]
fn escaping_the_domain_is_reported() {
    let f = corpus::half_square(1);
    let hand = hand2(f, HandParams::hand2(1.0, 2.0, 1.0)).unwrap();
    let outside = HybridState::new(&[1.0], &[1.0], 0.5);
    assert!(simulate(&hand, &outside, &SolverConfig::new(1e-2, 1.0), None).is_err());

    // A jump-state disturbance that pushes the clock below T_min leaves C ∪ D.
    let e4 = DisturbanceSpec::constant(vec![0.0, 0.0, 0.0]).unwrap();
    let e5 = DisturbanceSpec::constant(vec![0.0, 0.0, -0.5]).unwrap();
    let pert = PerturbationSet::zero(3)
        .with_jump_state_noise(e4)
        .with_jump_output_noise(e5);
    let trace = simulate(
        &hand,
        &offset_rest(&hand, 1.0),
        &SolverConfig::new(1e-2, 5.0),
        Some(&pert),
    )
    .unwrap();
    assert!(matches!(
        trace.termination,
        Termination::Fault {
            kind: FaultKind::EscapedDomain,
            ..
        }
    ));
}

proptest! {
    #[test]
    fn euler_tableau_equals_euler_step(
        x1 in proptest::collection::vec(-4.0f64..4.0, 2),
        x2 in proptest::collection::vec(-4.0f64..4.0, 2),
        tau in 0.1f64..5.0,
        h in 1e-4f64..0.5,
    ) {
        let f: CostFunction = corpus::diag_1_4();
        let flow = |z: &[f64], dz: &mut [f64]| hand_flow_into(z, 0.8, 2.0, &f, dz);
        let z = HybridState::new(&x1, &x2, tau);
        let a = euler_step(&flow, &z, h).unwrap();
        let b = rk_step(&flow, &z, h, &ButcherTableau::euler()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rest_state_stays_near_target(c in 0.2f64..2.0, t_max in 1.5f64..4.0) {
        let f = corpus::diag_1_4();
        let hand = hand2(f.clone(), HandParams::hand2(1.0, t_max, c)).unwrap();
        let xs = f.xstar().unwrap().to_vec();
        let cfg = SolverConfig::new(1e-2, 15.0).with_stride(5);
        let trace = simulate(&hand, &hand.rest_state(&xs), &cfg, None).unwrap();
        let params = *hand.params();
        for p in trace.samples() {
            let d = hand_core::hands::target_distance(&p.state, &xs, &params);
            prop_assert!(d <= 10.0 * 1e-2 * 4.0);
        }
    }
}
