use hand_core::analysis::{hand1_phase_probe, ProbeSettings};
use hand_core::cost::corpus;
use hand_core::hands::{target_distance, validate_dwell};
use hand_core::{
    hand1, hand2, simulate, DisturbanceSpec, Hand, HandKind, HandParams, HybridState, HybridSystem,
    Integrator, PerturbationSet, SolverConfig,
};
use proptest::prelude::*;

fn max_distance(hand: &Hand, z0: &HybridState, cfg: &SolverConfig) -> f64 {
    let xs = hand.cost().xstar().unwrap().to_vec();
    let trace = simulate(hand, z0, cfg, None).unwrap();
    assert!(!trace.is_faulted());
    trace
        .samples()
        .map(|p| target_distance(&p.state, &xs, hand.params()))
        .fold(0.0, f64::max)
}

#[test]
fn target_set_is_invariant() {
    let h = 1e-2;
    for f in corpus::bundled_corpus() {
        let l = f.lipschitz().unwrap();
        let xs = f.xstar().unwrap().to_vec();
        let hands = [
            hand1(f.clone(), HandParams::hand1(1.0, 1.5, 2.0, 1.0)).unwrap(),
            hand2(
                f.clone(),
                HandParams::hand2(1.0, 2.0 * std::f64::consts::E, 1.0),
            )
            .unwrap(),
        ];
        for hand in &hands {
            let cfg = SolverConfig::new(h, 60.0).with_stride(3);
            let d = max_distance(hand, &hand.rest_state(&xs), &cfg);
            assert!(
                d <= 10.0 * l * h,
                "{} {}: {d:e}",
                hand.kind().label(),
                f.label()
            );
        }
    }
}

#[test]
fn optimizer_is_a_fixed_point_of_the_reset() {
    let f = corpus::diag_1_4();
    let xs = f.xstar().unwrap().to_vec();
    let params = HandParams::hand2(1.0, 2.0, 1.0);
    let hand = hand2(f, params).unwrap();
    let z = HybridState::new(&xs, &[9.0, -4.0], 2.0);
    let post = hand.jump_state(&z).unwrap();
    assert_eq!(post, HybridState::new(&xs, &xs, 1.0));
    assert_eq!(target_distance(&post, &xs, &params), 0.0);
}

#[test]
fn periodic_hand1_jumps_every_two_seconds() {
    let f = corpus::half_square(1);
    let hand = hand1(f, HandParams::hand1(1.0, 3.0, 3.0, 1.0)).unwrap();
    let h = 1e-3;
    let cfg = SolverConfig::new(h, 11.0).with_stride(100);
    let trace = simulate(&hand, &hand.rest_state(&[2.0]), &cfg, None).unwrap();
    assert_eq!(trace.events.len(), 5);
    for (k, ev) in trace.events.iter().enumerate() {
        assert!((ev.pre.tau() - 3.0).abs() <= h);
        assert!((ev.time.t - 2.0 * (k + 1) as f64).abs() <= h);
    }
}

#[test]
fn dwell_sufficient_condition_on_grid() {
    let grid = [0.05, 0.1, 0.3, 0.5, 0.9, 1.0, 1.7, 2.5, 4.0];
    let mut implied = 0;
    for &t_min in &grid {
        for &dt in &grid {
            for &c in &[0.25, 0.5, 1.0, 3.0] {
                for &mu in &[0.1, 1.0, 4.0] {
                    let t_max = t_min + dt;
                    let p = HandParams::hand2(t_min, t_max, c);
                    if t_min + t_max > 1.0 && dt > 1.0 / (c * mu) {
                        implied += 1;
                        assert!(validate_dwell(&p, mu), "{p:?} mu={mu}");
                    }
                    let direct = t_max * t_max - t_min * t_min > 1.0 / (mu * c);
                    assert_eq!(validate_dwell(&p, mu), direct);
                }
            }
        }
    }
    assert!(implied > 50);
}

#[test]
fn dwell_violation_only_warns() {
    let f = corpus::half_square(1);
    let params = HandParams::hand2(1.0, 1.2, 1.0);
    assert!(!validate_dwell(&params, 1.0));
    let hand = hand2(f, params).unwrap();
    assert_eq!(hand.kind(), HandKind::Hand2);
}

#[test]
fn hand1_stability_surrogate() {
    // Running max distance grows with the initial radius; no run from a small
    // ball overshoots the worst run from a larger ball.
    let h = 1e-2;
    let radii = [0.25, 0.5, 1.0, 2.0, 4.0];
    for f in corpus::quadratic_corpus() {
        let hand = hand1(f.clone(), HandParams::hand1(1.0, 2.0, 3.0, 1.0)).unwrap();
        let xs = f.xstar().unwrap().to_vec();
        let n = f.dim();
        let slack = 10.0 * f.lipschitz().unwrap() * h;
        let cfg = SolverConfig::new(h, 30.0).with_stride(5);
        let mut alpha = Vec::new();
        for &r in &radii {
            let mut worst: f64 = 0.0;
            for k in 0..6 {
                let angle = k as f64 * 1.1;
                let dir: Vec<f64> = (0..n).map(|i| (angle + i as f64 * 2.0).cos()).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let x0: Vec<f64> = xs.iter().zip(&dir).map(|(s, d)| s + r * d / norm).collect();
                for tau0 in [1.0, 2.0, 3.0] {
                    let z0 = HybridState::new(&x0, &x0, tau0);
                    worst = worst.max(max_distance(&hand, &z0, &cfg));
                }
            }
            alpha.push(worst);
        }
        for w in alpha.windows(2) {
            assert!(w[0] <= w[1] + slack, "{}: {alpha:?}", f.label());
        }
        // Linear dynamics: alpha(r) / r is essentially constant.
        let gains: Vec<f64> = alpha.iter().zip(&radii).map(|(a, r)| a / r).collect();
        let (lo, hi) = gains.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), g| {
            (lo.min(*g), hi.max(*g))
        });
        assert!(hi / lo < 1.05, "{}: {gains:?}", f.label());
    }
}

#[test]
fn hand1_settling_time_ignores_clock_phase() {
    let f = corpus::example1(2.0);
    let params = HandParams::hand1(1.0, 2.0, 2.0, 1.0);
    let phases = [1.0, 1.25, 1.5, 1.75, 2.0];
    let rows = hand1_phase_probe(
        &f,
        &params,
        &phases,
        &[1.0],
        1e-2,
        &ProbeSettings::default(),
    )
    .unwrap();
    let times: Vec<f64> = rows.iter().map(|r| r.time_to_eps.unwrap()).collect();
    let (lo, hi) = times.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), t| {
        (lo.min(*t), hi.max(*t))
    });
    assert!(lo > 0.0 && hi / lo <= 1.5, "{times:?}");
}

#[test]
fn hand2_stays_bounded_under_square_wave() {
    let f = corpus::example1(2.0);
    let params = HandParams::hand2(1.0, 2.0 * std::f64::consts::E, 0.25);
    let hand = hand2(f.clone(), params).unwrap();
    let xs = f.xstar().unwrap().to_vec();
    let x0: Vec<f64> = xs.iter().map(|v| v + 1.0).collect();
    let axis: Vec<f64> = (0..hand.state_len())
        .map(|i| if i == 1 { 1.0 } else { 0.0 })
        .collect();
    let e2 = DisturbanceSpec::square_wave(1e-3, 1e4, &axis).unwrap();
    let pert = PerturbationSet::zero(hand.state_len()).with_dynamics_noise(e2);
    let cfg = SolverConfig::new(1e-2, 2000.0)
        .with_integrator(Integrator::Euler)
        .with_stride(100);
    let trace = simulate(&hand, &hand.rest_state(&x0), &cfg, Some(&pert)).unwrap();
    assert!(!trace.is_faulted());
    let late = trace
        .samples()
        .filter(|p| p.time.t >= 50.0)
        .map(|p| target_distance(&p.state, &xs, &params))
        .fold(0.0, f64::max);
    assert!(late <= 0.1, "late distance {late}");
}

proptest! {
    #[test]
    fn reset_never_increases_distance_at_optimizer(
        x2 in proptest::collection::vec(-10.0f64..10.0, 2),
        tau in 1.5f64..3.0,
    ) {
        let f = corpus::diag_1_4();
        let xs = f.xstar().unwrap().to_vec();
        for hand in [
            hand1(f.clone(), HandParams::hand1(1.0, 1.5, 3.0, 1.0)).unwrap(),
            hand2(f.clone(), HandParams::hand2(1.0, 3.0, 1.0)).unwrap(),
        ] {
            let z = HybridState::new(&xs, &x2, tau);
            let post = hand.jump_state(&z).unwrap();
            let p = hand.params();
            prop_assert!(target_distance(&post, &xs, p) <= target_distance(&z, &xs, p) + 1e-15);
        }
    }

    #[test]
    fn jump_image_lies_in_flow_set(
        x1 in proptest::collection::vec(-10.0f64..10.0, 2),
        x2 in proptest::collection::vec(-10.0f64..10.0, 2),
        t_min in 0.1f64..2.0,
        gap in 0.1f64..3.0,
    ) {
        let f = corpus::diag_1_4();
        let t_max = t_min + gap;
        for hand in [
            hand1(f.clone(), HandParams::hand1(t_min, t_min + 0.5 * gap, t_max, 1.0)).unwrap(),
            hand2(f.clone(), HandParams::hand2(t_min, t_max, 1.0)).unwrap(),
        ] {
            let z = HybridState::new(&x1, &x2, t_max);
            prop_assert!(hand.in_jump_set(z.as_slice(), 0.0));
            let post = hand.jump_state(&z).unwrap();
            prop_assert!(hand.in_flow_set(post.as_slice(), 0.0));
            prop_assert_eq!(post.x1(), z.x1());
        }
    }
}
