use std::f64::consts::TAU;

use proptest::prelude::*;
use seatkit::angle_chart::*;
use seatkit::system_model::{make_duffing_eight, PhasePoint};
use seatkit::Error;

// Periods of H = p²/2 − q²/2 + z q³ + q⁴/4 on outer orbits, by
// 30-digit quadrature of 2∮dq/p (mpmath).
const PERIODS: [(f64, f64, f64); 6] = [
    (0.5, 0.0, 6.7844787754263838),
    (0.5, 0.1, 6.7751343183732224),
    (0.1, 0.0, 9.9253786930682687),
    (0.1, 0.1, 9.8892313884331071),
    (0.02, 0.0, 13.272402691297905),
    (0.02, 0.1, 13.229068119700545),
];

// Θ₃ for γ = 1, ν = 0 (mpmath, loop integrals of p²).
const THETA3_Z0: f64 = 8.0 / 3.0;
const THETA3_Z01: f64 = 1.867038611110577 + 0.96069049172627021;

#[test]
fn periods_match_quadrature() {
    for &(h, z, t) in &PERIODS {
        let chart = Chart::new(make_duffing_eight(z, 1.0, 0.0));
        let o = chart.orbit(h, &[z]).unwrap();
        assert!((o.period - t).abs() < 1e-9 * t, "h={h} z={z}: {} vs {t}", o.period);
        assert!((o.period * o.omega - TAU).abs() < 1e-14);
        assert!(o.max_energy_error < 1e-9 * h.max(1.0));
    }
}

#[test]
fn transversal_is_the_upper_p_axis() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    for &h in &[1e-4, 0.02, 0.5, 2.0] {
        let x = chart.transversal_point(h, &[0.1]).unwrap();
        assert!(x.q.abs() < 1e-15);
        assert!((x.p - (2.0 * h).sqrt()).abs() < 1e-13 * x.p.max(1.0));
        let a = chart.to_angle(&x).unwrap();
        assert!(a.phi.min(TAU - a.phi) < 1e-10);
    }
    assert!(matches!(chart.transversal_point(0.0, &[0.1]), Err(Error::NoIntersection { .. })));
    assert!(matches!(chart.orbit(1e-7, &[0.1]), Err(Error::OutsideChart { .. })));
}

#[test]
fn right_loop_comes_first() {
    // φ ∈ (0, π) follows l₂ (q > 0) for the ray transversal
    let chart = Chart::new(make_duffing_eight(0.0, 1.0, 0.0));
    let x = chart.from_angle(&AnglePoint::new(0.01, &[0.0], 0.5 * std::f64::consts::PI)).unwrap();
    assert!(x.q > 1.0, "{x:?}");
    let x = chart.from_angle(&AnglePoint::new(0.01, &[0.0], 1.5 * std::f64::consts::PI)).unwrap();
    assert!(x.q < -1.0, "{x:?}");
}

#[test]
fn period_partials_are_consistent() {
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    for &h in &[0.5, 0.1, 0.02] {
        let p = chart.chart_partials(h, &[0.1]).unwrap();
        let o = chart.orbit(h, &[0.1]).unwrap();
        assert!((p.dt_dh * o.omega + o.period * p.domega_dh).abs() < 1e-6 * (p.dt_dh * o.omega).abs());
        // T ≈ (2/λ) ln(1/h) + c near the separatrix, so ∂T/∂h ≈ −2/h
        if h <= 0.1 {
            assert!((o.dt_dh * h + 2.0).abs() < 0.5, "h={h}: {}", o.dt_dh * h);
        }
    }
}

#[test]
fn mean_loss_approaches_theta3() {
    for &(z, theta3) in &[(0.0, THETA3_Z0), (0.1, THETA3_Z01)] {
        let chart = Chart::new(make_duffing_eight(z, 1.0, 0.0));
        let mut prev = f64::INFINITY;
        for &h in &[0.1, 0.05, 0.02, 0.01] {
            let o = chart.orbit(h, &[z]).unwrap();
            let sys = chart.system();
            let total = o.integrate_over_period(|_, q, p| sys.f_h(&PhasePoint::new(q, p, &[z]), 0.0));
            let dev = (total + theta3).abs();
            assert!(dev < prev, "z={z} h={h}: {dev} after {prev}");
            // dA/dh = T ≈ 2 ln(1/h) + c for the enclosed area A
            assert!(dev < 6.0 * h * (1.0 / h).ln(), "z={z} h={h}: {dev}");
            prev = dev;
        }
    }
}

#[test]
fn trace_identity_with_drift() {
    // f_w = ν ≠ 0 exercises the ∂T/∂w term
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.3));
    for &(h, phi) in &[(0.05, 0.2), (0.3, 2.5), (1.0, 5.9)] {
        let r = chart.trace_residual(&AnglePoint::new(h, &[0.1], phi), 0.0, 1e-3).unwrap();
        assert!(r.abs() < 1e-6, "h={h} phi={phi}: {r}");
    }
}

#[test]
fn phase_derivative_matches_flow() {
    // f_φ for a field along the unperturbed flow is ω: dφ/dt of the flow itself
    let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
    let o = chart.orbit(0.2, &[0.1]).unwrap();
    let sys = chart.system();
    for pt in o.grid(sys, 16) {
        let f = seatkit::system_model::Qpz { q: pt.flow.0, p: pt.flow.1, z: smallvec::smallvec![0.0] };
        let c = f_components_from(sys, o.omega, &pt, &f);
        assert!(c.f_h.abs() < 1e-12);
        assert!((c.f_phi - o.omega).abs() < 1e-8, "{} vs {}", c.f_phi, o.omega);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn angle_round_trip(h in 1e-3f64..1.0, phi in 0.0f64..TAU, z in -0.15f64..0.15) {
        let chart = Chart::new(make_duffing_eight(z, 1.0, 0.0));
        let a = AnglePoint::new(h, &[z], phi);
        let x = chart.from_angle(&a).unwrap();
        prop_assert!((chart.system().energy_at(&x) - h).abs() < 1e-10);
        let b = chart.to_angle(&x).unwrap();
        prop_assert!((b.h - h).abs() < 1e-10);
        let d = (b.phi - a.phi).abs();
        prop_assert!(d.min(TAU - d) < 1e-7);
    }

    #[test]
    fn trace_identity_random_points(h in 0.05f64..1.0, phi in 0.0f64..TAU, z in -0.15f64..0.15) {
        let chart = Chart::new(make_duffing_eight(z, 1.0, 0.0));
        let r = chart.trace_residual(&AnglePoint::new(h, &[z], phi), 0.0, 1e-3).unwrap();
        prop_assert!(r.abs() < 1e-3);
    }
}
