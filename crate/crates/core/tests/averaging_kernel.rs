use std::f64::consts::{PI, TAU};

use proptest::prelude::*;
use seatkit::angle_chart::Chart;
use seatkit::averaged_flow::u_star;
use seatkit::averaging_kernel::*;
use seatkit::separatrix::{compute_theta, orbit_loss};
use seatkit::system_model::make_duffing_eight;

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn kernel_solves_homological_equation() {
    for &(z, h) in &[(0.0, 0.5), (0.1, 0.1), (0.1, 0.01)] {
        let chart = Chart::new(make_duffing_eight(z, 1.0, 0.2));
        let s = KernelSample::slow(&chart, h, &[z], DEFAULT_N_PHI, 0.0).unwrap();
        assert!(s.homological_residual(Slow::H, &s.u_h) < 1e-8 * max_abs(&s.f_h).max(1.0));
        assert!(s.homological_residual(Slow::W(0), &s.u_w[0]) < 1e-8);
        let mean = s.u_h.iter().sum::<f64>() / s.n as f64;
        assert!(mean.abs() < 1e-12);
        // f_w = ν is constant, so its kernel vanishes
        assert!(max_abs(&s.u_w[0]) < 1e-12 && (s.fbar_w1[0] - 0.2).abs() < 1e-14);
    }
}

#[test]
fn mean_matches_orbit_quadrature() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    for &h in &[0.5, 0.05, 0.005] {
        let s = KernelSample::slow(&chart, h, &[0.1], DEFAULT_N_PHI, 0.0).unwrap();
        let loss = orbit_loss(&chart, h, &[0.1]).unwrap();
        assert!((s.fbar_h1 * s.period + loss).abs() < 1e-9 * loss, "h={h}");
    }
}

#[test]
fn grid_refinement_converges() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    for &h in &[0.3, 0.01] {
        let fine = KernelSample::slow(&chart, h, &[0.1], 512, 0.0).unwrap();
        let coarse = KernelSample::slow(&chart, h, &[0.1], 256, 0.0).unwrap();
        let d = (0..256).map(|j| (fine.u_h[2 * j] - coarse.u_h[j]).abs()).fold(0.0, f64::max);
        assert!(d < 1e-10, "h={h}: {d}");
        assert!(spectral_tail(&fine.f_h) < 1e-10);
    }
}

#[test]
fn point_evaluator_matches_grid() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    let s = KernelSample::slow(&chart, 0.1, &[0.1], DEFAULT_N_PHI, 0.0).unwrap();
    for &j in &[0, 64, 200, 511] {
        let direct = u1(&chart, Slow::H, 0.1, &[0.1], s.phi[j], 0.0).unwrap();
        assert!((direct - s.u_h[j]).abs() < 1e-10, "j={j}");
    }
    let phi = 1.2345;
    let direct = u1(&chart, Slow::H, 0.1, &[0.1], phi, 0.0).unwrap();
    assert!((direct - interpolate_periodic(&s.u_h, phi)).abs() < 1e-10);
}

#[test]
fn kernel_integral_matches_time_quadrature() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    for &h in &[0.3, 0.03] {
        let c = hat_coefficients(&chart, h, &[0.1]).unwrap();
        let direct = curly_i(&chart, h, &[0.1]).unwrap();
        assert!((c.curly_i - direct).abs() < 1e-8 * direct.abs());
    }
}

#[test]
fn symmetric_kernel_vanishes_on_transversal() {
    // f_h is even about φ = 0 and π-periodic when z = 0, so u_h is odd
    let chart = Chart::new(make_duffing_eight(0.0, 1.0, 0.0));
    for &h in &[0.3, 0.01] {
        let s = KernelSample::slow(&chart, h, &[0.0], DEFAULT_N_PHI, 0.0).unwrap();
        let n = s.n;
        assert!(s.u_h[0].abs() < 1e-10, "{}", s.u_h[0]);
        for j in 1..n / 2 {
            assert!((s.u_h[j] + s.u_h[n - j]).abs() < 1e-10);
        }
    }
}

#[test]
fn kernel_on_transversal_tends_to_u_star() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    let (t1, t2, _) = compute_theta(&chart, &[0.1]).unwrap();
    let target = u_star(t1, t2);
    assert!(target < 0.0);
    let mut prev = f64::INFINITY;
    for &h in &[0.3, 0.03, 3e-3, 3e-4] {
        let d = (hat_coefficients(&chart, h, &[0.1]).unwrap().u_h_at_zero - target).abs();
        assert!(d < prev, "h={h}: {d}");
        prev = d;
    }
    assert!(prev < 0.02);
}

#[test]
fn kernel_approaches_sawtooth_limit() {
    for &z in &[0.0, 0.1] {
        let chart = Chart::new(make_duffing_eight(z, 1.0, 0.0));
        let (t1, t2, _) = compute_theta(&chart, &[z]).unwrap();
        let limit = u_h_limit_max(t1, t2);
        let mut prev_l1 = f64::INFINITY;
        let mut prev_max = 0.0;
        for &h in &[1e-1, 1e-2, 1e-3, 1e-4] {
            let s = KernelSample::slow(&chart, h, &[z], 1024, 0.0).unwrap();
            let l1 = (0..s.n).map(|j| (s.u_h[j] - u_h_limit(t1, t2, j as f64 / s.n as f64)).abs()).sum::<f64>() / s.n as f64;
            let m = max_abs(&s.u_h);
            assert!(l1 < prev_l1 && m > prev_max && m < limit, "z={z} h={h}");
            prev_l1 = l1;
            prev_max = m;
        }
        assert!(prev_l1 < 0.25 * limit, "z={z}: {prev_l1}");
    }
}

#[test]
fn limit_closed_form() {
    // z = 0: Θ₁ = Θ₂ = 4/3, sup |u| = Θ₃/4
    assert!((u_h_limit_max(4.0 / 3.0, 4.0 / 3.0) - 2.0 / 3.0).abs() < 1e-15);
    assert!(u_h_limit(4.0 / 3.0, 4.0 / 3.0, 0.0).abs() < 1e-15);
    assert!((u_h_limit(1.8, 0.9, 0.0) - u_star(1.8, 0.9)).abs() < 1e-15);
    let mean = (0..4000).map(|j| u_h_limit(1.8, 0.9, (j as f64 + 0.5) / 4000.0)).sum::<f64>() / 4000.0;
    assert!(mean.abs() < 1e-12);
}

#[test]
fn second_order_routes_agree() {
    for &(z, nu) in &[(0.1, 0.0), (0.1, 0.3), (0.0, 0.3)] {
        let chart = Chart::new(make_duffing_eight(z, 1.0, nu));
        for &h in &[0.3, 0.05] {
            let f = fbar2(&chart, h, &[z]).unwrap();
            assert!((f.fbar_h2 - f.fbar_h2_direct).abs() < 1e-4 * f.h2_term_scale, "z={z} nu={nu} h={h}: {f:?}");
            assert!((f.fbar_w2[0] - f.fbar_w2_direct[0]).abs() < 1e-4 * f.h2_term_scale.max(1.0));
        }
    }
}

#[test]
fn frequency_correction_matches_integral_route() {
    // the two routes differ by the constant π γ
    for &z in &[0.0, 0.1] {
        let chart = Chart::new(make_duffing_eight(z, 1.0, 0.0));
        for &h in &[0.3, 0.03] {
            let (om1, diag) = omega1_diagnostic(&chart, h, &[z]).unwrap();
            assert!((om1 - diag - PI).abs() < 1e-5, "z={z} h={h}: {om1} {diag}");
        }
    }
    // z = 0: ω₁ vanishes by symmetry
    let chart = Chart::new(make_duffing_eight(0.0, 1.0, 0.0));
    assert!(omega1(&chart, 0.1, &[0.0]).unwrap().abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn homological_solver_inverts_derivative(
        a in prop::collection::vec(-1.0f64..1.0, 8),
        mean in -2.0f64..2.0,
        omega in 0.1f64..5.0,
    ) {
        let n = 64;
        let g: Vec<f64> = (0..n)
            .map(|j| {
                let p = TAU * j as f64 / n as f64;
                mean + (0..4).map(|k| a[2 * k] * ((k + 1) as f64 * p).cos() + a[2 * k + 1] * ((k + 1) as f64 * p).sin()).sum::<f64>()
            })
            .collect();
        let (m, u) = solve_homological(&g, omega);
        prop_assert!((m - mean).abs() < 1e-13);
        let du = spectral_derivative(&u);
        for j in 0..n {
            prop_assert!((omega * du[j] - (g[j] - mean)).abs() < 1e-12);
        }
        prop_assert!(u.iter().sum::<f64>().abs() < 1e-12);
    }
}
