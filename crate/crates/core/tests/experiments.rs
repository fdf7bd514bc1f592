use rand::Rng;
use seatkit::experiments::*;
use seatkit::system_model::SystemConfig;
use seatkit::Error;

fn duffing(z0: f64, gamma: f64) -> SystemConfig {
    SystemConfig { system: "duffing_eight".into(), z0, gamma, nu: 0.0 }
}

fn small(z0: f64) -> ExperimentConfig {
    ExperimentConfig {
        system: duffing(z0, 1.0),
        eps: vec![4e-3, 2e-3],
        n_starts: 3,
        n_samples: 40,
        scaling_h: vec![1e-1, 1e-2, 1e-3],
        ..Default::default()
    }
}

#[test]
fn same_seed_gives_identical_csv() {
    let cfg = small(0.1);
    let a = cmd_phase_compare(&cfg).unwrap();
    let b = cmd_phase_compare(&cfg).unwrap();
    let m = Manifest::new("phase-compare", &cfg);
    let csv = phase_rows_csv(&m, &a.rows);
    assert_eq!(csv, phase_rows_csv(&m, &b.rows));
    assert!(csv.starts_with("# command: phase-compare\n"));
    assert!(csv.contains(&format!("# config_hash: {}", m.config_hash)));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 3);

    let other = cmd_phase_compare(&ExperimentConfig { seed: 2, ..cfg }).unwrap();
    assert_ne!(other.rows[0].h0, a.rows[0].h0);
}

#[test]
fn execution_mode_does_not_change_results() {
    let par = ExperimentConfig { execution: Execution::Parallel, ..small(0.1) };
    let seq = ExperimentConfig { execution: Execution::Sequential, ..small(0.1) };
    assert_eq!(cmd_phase_compare(&par).unwrap().rows, cmd_phase_compare(&seq).unwrap().rows);
    assert_eq!(cmd_capture_prob_anosov(&par).unwrap(), cmd_capture_prob_anosov(&seq).unwrap());
    let draw = |i: usize| trial_rng(5, i as u64).random::<u64>();
    assert_eq!(run_trials(Execution::Parallel, 100, draw), run_trials(Execution::Sequential, 100, draw));
}

#[test]
fn phase_rows_are_consistent() {
    let r = cmd_phase_compare(&small(0.1)).unwrap();
    for row in &r.rows {
        assert!(row.error.is_none(), "{row:?}");
        assert!((0.0..1.0).contains(&row.predicted) && (0.0..1.0).contains(&row.measured));
        assert!(row.circular_error <= 0.5);
        assert!(row.h0 >= 0.5 && row.h0 <= 0.55);
    }
    // identical starts across ε
    assert_eq!(r.rows[0].h0, r.rows[3].h0);
    assert_eq!(r.summaries.len(), 2);
}

#[test]
fn domain_boundary() {
    use seatkit::direct_sim::Domain;
    assert_eq!(domain_from_phase(0.1, 1.0, 3.0), Domain::G2);
    assert_eq!(domain_from_phase(0.34, 1.0, 3.0), Domain::G1);
}

#[test]
fn single_trial_estimate() {
    let cfg = ExperimentConfig { n_samples: 1, ..small(0.0) };
    let e = cmd_capture_prob_anosov(&cfg).unwrap();
    assert_eq!(e.n + e.n_failed, 1);
    assert!(e.std_error.is_none() && e.deviation_sigma.is_none());
    assert!(e.estimate == 0.0 || e.estimate == 1.0);
}

#[test]
fn arnold_estimate_is_insensitive_to_radius() {
    let base = ExperimentConfig { n_samples: 200, ..small(0.1) };
    let a = cmd_capture_prob_arnold(&base).unwrap();
    let b = cmd_capture_prob_arnold(&ExperimentConfig { arnold_radius_factor: 0.5 * base.arnold_radius_factor, ..base.clone() }).unwrap();
    assert_eq!(a.n_failed + b.n_failed, 0);
    assert!((b.radius.unwrap() - 0.5 * a.radius.unwrap()).abs() < 1e-15);
    let sigma = (a.std_error.unwrap().powi(2) + b.std_error.unwrap().powi(2)).sqrt();
    assert!((a.estimate - b.estimate).abs() < 2.0 * sigma, "{a:?} {b:?}");
    assert!((a.predicted - 0.66026077577145493).abs() < 0.01);
}

#[test]
fn undamped_scaling_is_degenerate_but_defined() {
    let cfg = ExperimentConfig { system: duffing(0.0, 0.0), ..small(0.0) };
    let r = cmd_scaling(&cfg).unwrap();
    assert!(r.entries.iter().all(|e| e.max_u_h == 0.0 && e.omega1 == 0.0));
    assert_eq!(r.u_h_range_ratio, 1.0);
    assert!(r.u_h_limit.is_none() && !r.u_h_approaches_limit && r.hcut.is_none());
    assert!(r.t_slope_rel_error < 0.05);
}

#[test]
fn undamped_capture_is_rejected() {
    let cfg = ExperimentConfig { system: duffing(0.0, 0.0), ..small(0.0) };
    let r = cmd_capture_prob_anosov(&cfg);
    assert!(matches!(r, Err(Error::NonPositiveTheta { .. } | Error::ThetaSignError { .. })), "{r:?}");
}

#[test]
fn scaling_on_damped_system() {
    let r = cmd_scaling(&small(0.0)).unwrap();
    assert!((r.lambda - 1.0).abs() < 1e-12);
    assert!(r.u_h_approaches_limit);
    assert!(r.hcut.unwrap().difference < 0.01);
}

#[test]
fn selftest_passes_on_defaults() {
    for z0 in [0.0, 0.1] {
        let r = cmd_selftest(&small(z0), 1.0).unwrap();
        assert!(r.pass, "{:?}", r.failed().collect::<Vec<_>>());
    }
    let strict = cmd_selftest(&small(0.1), 1e-6).unwrap();
    assert!(!strict.pass && strict.failed().count() > 3);
}

#[test]
fn bad_configs_are_config_errors() {
    assert!(matches!(ExperimentConfig::from_json(r#"{"n_starts": 0}"#), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::from_json(r#"{"system": {"system": "nope"}}"#).and_then(|c| c.build_system().map(|_| ())), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::load(std::path::Path::new("/nonexistent/cfg.json")), Err(Error::Config(_))));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    std::fs::write(&p, r#"{"seed": 9, "eps": [2e-3, 1e-3]}"#).unwrap();
    let cfg = ExperimentConfig::load(&p).unwrap();
    assert_eq!((cfg.seed, cfg.eps.len()), (9, 2));
}
