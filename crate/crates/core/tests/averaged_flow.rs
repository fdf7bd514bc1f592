use std::f64::consts::TAU;

use proptest::prelude::*;
use seatkit::angle_chart::Chart;
use seatkit::averaged_flow::*;
use seatkit::direct_sim::SimConfig;
use seatkit::separatrix::orbit_loss;
use seatkit::system_model::make_duffing_eight;
use seatkit::Error;

/// Composite Simpson in `ln h` over `[a, b]`.
fn simpson_log(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (la, lb) = (a.ln(), b.ln());
    let dx = (lb - la) / n as f64;
    let g = |i: usize| {
        let h = (la + dx * i as f64).exp();
        h * f(h)
    };
    let mut s = g(0) + g(n);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i);
    }
    s * dx / 3.0
}

#[test]
fn first_order_flow_matches_quadrature() {
    // z = 0, ν = 0: w is frozen and dh/dτ = −Θ(h)/T(h), so
    // τ = ∫ T/Θ dh and the phase is ∫ 2π/Θ dh.
    let chart = Chart::new(make_duffing_eight(0.0, 1.0, 0.0));
    let cfg = FlowConfig::default();
    let eps = 1e-3;
    let traj = integrate_averaged(&chart, &cfg, Order::One, 0.5, &[0.0], eps).unwrap();
    assert_eq!(traj.h_cut, cfg.h_cut(eps));
    let loss = |h: f64| orbit_loss(&chart, h, &[0.0]).unwrap();
    let tau = simpson_log(traj.h_cut, 0.5, 128, |h| chart.period(h, &[0.0]).unwrap() / loss(h));
    let phase = simpson_log(traj.h_cut, 0.5, 128, |h| TAU / loss(h));
    assert!((traj.tau_cut - tau).abs() < 1e-7 * tau, "{} vs {tau}", traj.tau_cut);
    assert!((traj.phase_cut - phase).abs() < 1e-7 * phase, "{} vs {phase}", traj.phase_cut);
    assert!(traj.w_cut[0] == 0.0 && traj.tau_star >= traj.tau_cut);
}

#[test]
fn second_order_matches_first_for_duffing() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    let cfg = FlowConfig::default();
    let one = integrate_averaged(&chart, &cfg, Order::One, 0.5, &[0.1], 2e-3).unwrap();
    let two = integrate_averaged(&chart, &cfg, Order::Two, 0.5, &[0.1], 2e-3).unwrap();
    assert!((one.tau_cut - two.tau_cut).abs() < 1e-8 * one.tau_cut);
    assert!((one.phase_cut - two.phase_cut).abs() < 1e-6);
    // the flow is monotone in h
    assert!(two.samples.windows(2).all(|s| s[1].h < s[0].h && s[1].tau > s[0].tau));
}

#[test]
fn cutoff_doubling_is_stable() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    let base = FlowConfig::default();
    let doubled = FlowConfig { h_cut_scale: 2.0, ..base };
    for &eps in &[2e-3, 1e-3] {
        let a = predict_pseudo_phase(&chart, &base, 0.5, &[0.1], 0.7, eps).unwrap();
        let b = predict_pseudo_phase(&chart, &doubled, 0.5, &[0.1], 0.7, eps).unwrap();
        let d = (a.phase_fraction - b.phase_fraction).abs();
        assert!(d.min(1.0 - d) < 1e-3, "eps={eps}: {d}");
        assert!((b.h_cut - 2.0 * a.h_cut).abs() < 1e-15);
    }
}

#[test]
fn deep_tails_are_independent_of_depth() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    let base = FlowConfig::default();
    let p = predict_pseudo_phase(&chart, &base, 0.5, &[0.1], 0.0, 1e-3).unwrap();
    let q = predict_pseudo_phase(&chart, &FlowConfig { tail_depth: 1e-2, ..base }, 0.5, &[0.1], 0.0, 1e-3).unwrap();
    let d = (p.phase_fraction - q.phase_fraction).abs();
    assert!(d.min(1.0 - d) < 1e-3, "{d}");
    assert!(p.integral.u_h_tail < 0.0 && p.integral.u_h_tail > p.u_star - 0.05);
    let sum = p.phi0_term + p.integral_term + p.u_star_term;
    assert!((sum - sum.floor() - p.phase_fraction).abs() < 1e-12);
}

#[test]
fn start_below_cutoff_is_rejected() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    let cfg = FlowConfig::default();
    let r = integrate_averaged(&chart, &cfg, Order::Two, 0.5 * cfg.h_cut(1e-3), &[0.1], 1e-3);
    assert!(matches!(r, Err(Error::CutoffTooLarge { .. })), "{r:?}");
}

#[test]
fn comparison_refused_near_separatrix() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    let cfg = FlowConfig::default();
    let r = compare_to_true(&chart, &cfg, &SimConfig::default(), Order::Two, 0.5, &[0.1], 0.0, 1e-3, 0.015);
    assert!(matches!(r, Err(Error::Config(_))), "{r:?}");
}

#[test]
fn averaged_solution_tracks_true_solution() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    let r = compare_to_true(&chart, &FlowConfig::default(), &SimConfig::default(), Order::Two, 0.5, &[0.1], 0.0, 2e-3, 0.05).unwrap();
    assert!(r.h_true < 0.06 && r.h_true > 0.04);
    assert!(r.error < 1e-4, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn phase_fraction_in_unit_interval(h0 in 0.3f64..0.8, phi0 in 0.0f64..TAU, eps in 1e-3f64..4e-3) {
        let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
        let p = predict_pseudo_phase(&chart, &FlowConfig::default(), h0, &[0.1], phi0, eps).unwrap();
        prop_assert!((0.0..1.0).contains(&p.phase_fraction));
        prop_assert!((0.0..1.0).contains(&p.phase_fraction_at_cut));
        prop_assert!(p.theta3 > 0.0 && p.h0_hat > 0.0);
    }
}
