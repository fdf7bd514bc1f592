//! Experiment drivers behind the CLI: pseudo-phase sweeps, capture
//! probabilities, scaling fits and the self-test.
//!
//! Every trial draws from its own ChaCha8 stream keyed by `(seed, index)`, so
//! results do not depend on the execution order.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::angle_chart::{AnglePoint, Chart};
use crate::averaged_flow::{integrate_averaged, predict_pseudo_phase, FlowConfig, Order};
use crate::averaging_kernel::{fbar2, u_h_limit_max, KernelSample, Slow, DEFAULT_N_PHI};
use crate::direct_sim::{Domain, SimConfig, Simulator, StopRule};
use crate::error::{Error, Result};
use crate::numerics::{circular_distance, linear_fit, median};
use crate::separatrix::{check_theta, compute_theta};
use crate::system_model::{find_saddle, make_duffing_eight, Params, PhasePoint, SystemConfig, SystemDef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    /// Initial `w`; defaults to the system's own parameter value.
    pub w0: Option<Vec<f64>>,
    /// ε grid of the phase comparison.
    pub eps: Vec<f64>,
    /// Phase-comparison starts are drawn with `h₀` uniform in `[h0, h0 + h0_spread]`.
    pub h0: f64,
    pub h0_spread: f64,
    pub phi0: f64,
    pub n_starts: usize,
    /// Anosov sweep: ε in `(0, eps0]`, stratified with one jittered draw per stratum.
    pub eps0: f64,
    /// Anosov draws are clamped to at least `anosov_floor · eps0`.
    pub anosov_floor: f64,
    pub n_samples: usize,
    /// Arnold sampling: fixed ε and a ball of radius `arnold_radius_factor · ε` in `(h, w)`.
    /// The ball must hold many capture stripes of width `O(ε)`; at 10ε the
    /// partial stripes at its edge bias the estimate by a few percent.
    pub arnold_eps: f64,
    pub arnold_radius_factor: f64,
    pub scaling_h: Vec<f64>,
    /// ε used for the `h_cut` doubling check.
    pub scaling_eps: f64,
    pub seed: u64,
    pub execution: Execution,
    pub flow: FlowConfig,
    pub sim: SimConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig { system: "duffing_eight".into(), z0: 0.0, gamma: 1.0, nu: 0.0 },
            w0: None,
            eps: vec![4e-3, 2e-3, 1e-3],
            h0: 0.5,
            h0_spread: 0.05,
            phi0: 0.0,
            n_starts: 20,
            eps0: 4e-3,
            anosov_floor: 1e-3,
            n_samples: 2000,
            arnold_eps: 2e-3,
            arnold_radius_factor: 50.0,
            scaling_h: vec![1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
            scaling_eps: 1e-3,
            seed: 1,
            execution: Execution::default(),
            flow: FlowConfig::default(),
            sim: SimConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.eps.is_empty() || self.eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad(format!("eps grid must be non-empty and positive: {:?}", self.eps));
        }
        let desc = self.eps.windows(2).all(|w| w[0] > w[1]);
        let asc = self.eps.windows(2).all(|w| w[0] < w[1]);
        if !(desc || asc) {
            return bad(format!("eps grid must be strictly sorted: {:?}", self.eps));
        }
        for (name, v) in [("eps0", self.eps0), ("arnold_eps", self.arnold_eps), ("scaling_eps", self.scaling_eps), ("h0", self.h0)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.n_starts == 0 || self.n_samples == 0 {
            return bad("sample counts must be at least 1".into());
        }
        if !(self.h0_spread >= 0.0) || !(self.arnold_radius_factor >= 0.0) || !(0.0..=1.0).contains(&self.anosov_floor) {
            return bad("h0_spread and arnold_radius_factor must be non-negative, anosov_floor in [0, 1]".into());
        }
        if self.scaling_h.iter().any(|h| !(*h > 0.0)) {
            return bad("scaling_h must be positive".into());
        }
        if let Some(w) = &self.w0 {
            if w.len() != 1 {
                return bad(format!("w0 must have length 1 for {}", self.system.system));
            }
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<SystemDef> {
        self.system.build()
    }

    pub fn w0(&self, sys: &SystemDef) -> Params {
        match &self.w0 {
            Some(w) => Params::from_slice(w),
            None => sys.default_w(),
        }
    }
}

/// Provenance attached to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub flow_rtol: f64,
    pub flow_atol: f64,
    pub sim_rtol: f64,
    pub sim_atol: f64,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        let canonical = serde_json::to_string(cfg).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let config_hash = digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash,
            seed: cfg.seed,
            flow_rtol: cfg.flow.rtol,
            flow_atol: cfg.flow.atol,
            sim_rtol: cfg.sim.rtol,
            sim_atol: cfg.sim.atol,
        }
    }

    /// `# key: value` lines for CSV headers.
    pub fn header_lines(&self) -> String {
        format!(
            "# command: {}\n# version: {}\n# config_hash: {}\n# seed: {}\n# flow_tol: rtol={:e} atol={:e}\n# sim_tol: rtol={:e} atol={:e}\n",
            self.command, self.version, self.config_hash, self.seed, self.flow_rtol, self.flow_atol, self.sim_rtol, self.sim_atol
        )
    }
}

/// Independent stream for trial `index`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `f(0), …, f(n−1)` in index order, on the rayon pool when requested and
/// compiled in.
pub fn run_trials<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec == Execution::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

// ---------------------------------------------------------------- phase compare

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseRow {
    pub eps: f64,
    pub trial: usize,
    pub h0: f64,
    pub w0: f64,
    pub phi0: f64,
    pub predicted: f64,
    pub measured: f64,
    pub circular_error: f64,
    pub h_minus_1: f64,
    pub guard_band: bool,
    pub domain: Option<Domain>,
    pub predicted_domain: Option<Domain>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSummary {
    pub eps: f64,
    pub n_used: usize,
    pub n_guard: usize,
    pub n_failed: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub max: f64,
    /// Fraction of used rows where the phase-predicted capture domain matches.
    pub domain_agreement: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseCompareReport {
    pub rows: Vec<PhaseRow>,
    pub summaries: Vec<PhaseSummary>,
    /// Medians strictly decrease as ε decreases.
    pub median_decreasing: bool,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let x = q * (sorted.len() - 1) as f64;
    let i = x.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (x - i as f64) * (sorted[j] - sorted[i])
}

/// Domain implied by a pseudo-phase: capture into `G₂` iff the phase is
/// below `Θ₂/Θ₃`.
pub fn domain_from_phase(phase: f64, theta2: f64, theta3: f64) -> Domain {
    if phase < theta2 / theta3 {
        Domain::G2
    } else {
        Domain::G1
    }
}

pub fn cmd_phase_compare(cfg: &ExperimentConfig) -> Result<PhaseCompareReport> {
    cfg.validate()?;
    let chart = Chart::new(cfg.build_system()?);
    let w0 = cfg.w0(chart.system());
    let sim = Simulator::new(&chart, cfg.sim);
    let n = cfg.n_starts;
    let jobs: Vec<(usize, usize)> = (0..cfg.eps.len()).flat_map(|e| (0..n).map(move |i| (e, i))).collect();
    let rows = run_trials(cfg.execution, jobs.len(), |j| {
        let (e, i) = jobs[j];
        let eps = cfg.eps[e];
        // the same starts at every ε
        let mut rng = trial_rng(cfg.seed, i as u64);
        let h0 = cfg.h0 + cfg.h0_spread * rng.random::<f64>();
        phase_row(&chart, &sim, cfg, eps, i, h0, &w0)
    });
    let mut summaries = Vec::new();
    for &eps in &cfg.eps {
        let sel: Vec<&PhaseRow> = rows.iter().filter(|r| r.eps == eps).collect();
        let used: Vec<&&PhaseRow> = sel.iter().filter(|r| r.error.is_none() && !r.guard_band).collect();
        let mut errs: Vec<f64> = used.iter().map(|r| r.circular_error).collect();
        errs.sort_by(f64::total_cmp);
        let agree = used.iter().filter(|r| r.domain.is_some() && r.domain == r.predicted_domain).count();
        summaries.push(PhaseSummary {
            eps,
            n_used: used.len(),
            n_guard: sel.iter().filter(|r| r.error.is_none() && r.guard_band).count(),
            n_failed: sel.iter().filter(|r| r.error.is_some()).count(),
            median: median(&errs).unwrap_or(f64::NAN),
            q25: quantile(&errs, 0.25),
            q75: quantile(&errs, 0.75),
            max: errs.last().copied().unwrap_or(f64::NAN),
            domain_agreement: if used.is_empty() { f64::NAN } else { agree as f64 / used.len() as f64 },
        });
    }
    let mut by_eps = summaries.clone();
    by_eps.sort_by(|a, b| b.eps.total_cmp(&a.eps));
    let median_decreasing = by_eps.windows(2).all(|s| s[1].median < s[0].median);
    Ok(PhaseCompareReport { rows, summaries, median_decreasing })
}

fn phase_row(chart: &Chart, sim: &Simulator, cfg: &ExperimentConfig, eps: f64, trial: usize, h0: f64, w0: &[f64]) -> PhaseRow {
    let mut row = PhaseRow {
        eps,
        trial,
        h0,
        w0: w0[0],
        phi0: cfg.phi0,
        predicted: f64::NAN,
        measured: f64::NAN,
        circular_error: f64::NAN,
        h_minus_1: f64::NAN,
        guard_band: false,
        domain: None,
        predicted_domain: None,
        error: None,
    };
    let outcome = (|| -> Result<()> {
        let pred = predict_pseudo_phase(chart, &cfg.flow, h0, w0, cfg.phi0, eps)?;
        row.predicted = pred.phase_fraction;
        row.predicted_domain = Some(domain_from_phase(pred.phase_fraction, pred.theta2, pred.theta3));
        let x0 = chart.from_angle(&AnglePoint::new(h0, w0, cfg.phi0))?;
        let res = sim.measure_pseudo_phase(&x0, eps)?;
        row.measured = res.measured_pseudo_phase;
        row.h_minus_1 = res.h_minus_1;
        row.guard_band = res.guard_band_applied;
        row.domain = Some(res.domain);
        row.circular_error = circular_distance(row.predicted, row.measured);
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = Some(e.to_string());
    }
    row
}

pub fn phase_rows_csv(manifest: &Manifest, rows: &[PhaseRow]) -> String {
    let mut s = manifest.header_lines();
    s.push_str("eps,trial,h0,w0,phi0,predicted,measured,circular_error,h_minus_1,guard_band,domain,predicted_domain,error\n");
    let dom = |d: Option<Domain>| d.map_or(String::new(), |d| format!("{d:?}"));
    for r in rows {
        let _ = writeln!(
            s,
            "{:e},{},{:.17},{:.17},{:.17},{:.17},{:.17},{:.17},{:.17e},{},{},{},{}",
            r.eps,
            r.trial,
            r.h0,
            r.w0,
            r.phi0,
            r.predicted,
            r.measured,
            r.circular_error,
            r.h_minus_1,
            r.guard_band,
            dom(r.domain),
            dom(r.predicted_domain),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    s
}

// ---------------------------------------------------------------- capture probability

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Definition {
    Anosov,
    Arnold,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityEstimate {
    pub definition: Definition,
    pub target: Domain,
    /// Successfully classified trials.
    pub n: usize,
    pub n_target: usize,
    pub n_failed: usize,
    pub estimate: f64,
    /// `√(p̂(1−p̂)/N)`; `None` when fewer than two trials were classified.
    pub std_error: Option<f64>,
    /// `Θ_j/Θ₃` at the averaged `w*`.
    pub predicted: f64,
    /// `|p̂ − predicted| / σ` when σ is defined and positive.
    pub deviation_sigma: Option<f64>,
    pub eps: f64,
    pub radius: Option<f64>,
}

impl ProbabilityEstimate {
    fn from_counts(definition: Definition, target: Domain, outcomes: &[Result<Domain>], predicted: f64, eps: f64, radius: Option<f64>) -> Self {
        let n = outcomes.iter().filter(|o| o.is_ok()).count();
        let n_target = outcomes.iter().filter(|o| matches!(o, Ok(d) if *d == target)).count();
        let estimate = if n == 0 { f64::NAN } else { n_target as f64 / n as f64 };
        let std_error = (n >= 2).then(|| (estimate * (1.0 - estimate) / n as f64).sqrt());
        let deviation_sigma = std_error.filter(|s| *s > 0.0).map(|s| (estimate - predicted).abs() / s);
        Self { definition, target, n, n_target, n_failed: outcomes.len() - n, estimate, std_error, predicted, deviation_sigma, eps, radius }
    }
}

/// `Θ₁/Θ₃` at the end point `w*` of the averaged flow started from `(h₀, w₀)`.
fn predicted_ratio(chart: &Chart, cfg: &ExperimentConfig, w0: &[f64], eps: f64) -> Result<f64> {
    let traj = integrate_averaged(chart, &cfg.flow, Order::One, cfg.h0, w0, eps)?;
    let (t1, t2, t3) = compute_theta(chart, &traj.w_star)?;
    check_theta(t1, t2)?;
    Ok(t1 / t3)
}

/// Anosov-type estimate: fixed start, ε sampled over `(0, ε₀]`.
pub fn cmd_capture_prob_anosov(cfg: &ExperimentConfig) -> Result<ProbabilityEstimate> {
    cfg.validate()?;
    let chart = Chart::new(cfg.build_system()?);
    let w0 = cfg.w0(chart.system());
    let predicted = predicted_ratio(&chart, cfg, &w0, cfg.eps0)?;
    let x0 = chart.from_angle(&AnglePoint::new(cfg.h0, &w0, cfg.phi0))?;
    let sim = Simulator::new(&chart, cfg.sim);
    let n = cfg.n_samples;
    let outcomes = run_trials(cfg.execution, n, |i| {
        let mut rng = trial_rng(cfg.seed, i as u64);
        let u: f64 = rng.random();
        let eps = cfg.eps0 * ((i as f64 + 1.0 - u) / n as f64).max(cfg.anosov_floor);
        sim.classify_capture(&x0, eps)
    });
    Ok(ProbabilityEstimate::from_counts(Definition::Anosov, Domain::G1, &outcomes, predicted, cfg.eps0, None))
}

/// Arnold-type estimate: fixed ε, starts uniform in a ball around `(h₀, w₀)`
/// at fixed `φ₀`.
pub fn cmd_capture_prob_arnold(cfg: &ExperimentConfig) -> Result<ProbabilityEstimate> {
    cfg.validate()?;
    let chart = Chart::new(cfg.build_system()?);
    let w0 = cfg.w0(chart.system());
    let eps = cfg.arnold_eps;
    let predicted = predicted_ratio(&chart, cfg, &w0, eps)?;
    let r = cfg.arnold_radius_factor * eps;
    let sim = Simulator::new(&chart, cfg.sim);
    let dim = 1 + w0.len();
    let outcomes = run_trials(cfg.execution, cfg.n_samples, |i| {
        let mut rng = trial_rng(cfg.seed, i as u64);
        // rejection from the enclosing cube
        let offset = loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                break v;
            }
        };
        let h = cfg.h0 + r * offset[0];
        let w: Params = w0.iter().zip(&offset[1..]).map(|(w, o)| w + r * o).collect();
        let x0 = chart.from_angle(&AnglePoint::new(h, &w, cfg.phi0))?;
        sim.classify_capture(&x0, eps)
    });
    Ok(ProbabilityEstimate::from_counts(Definition::Arnold, Domain::G1, &outcomes, predicted, eps, Some(r)))
}

// ---------------------------------------------------------------- scaling

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingEntry {
    pub h: f64,
    pub period: f64,
    pub log_inv_h: f64,
    pub max_u_h: f64,
    pub max_u_phi: f64,
    /// `max|u_{φ,1}| · h · ln(1/h)`.
    pub u_phi_scaled: f64,
    pub omega1: f64,
    /// `|ω₁| · h`.
    pub omega1_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HcutStability {
    pub eps: f64,
    pub phase: f64,
    pub phase_doubled: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub lambda: f64,
    pub entries: Vec<ScalingEntry>,
    /// Slope of `T` against `ln(1/h)` over the grid.
    pub t_slope: f64,
    pub t_slope_expected: f64,
    pub t_slope_rel_error: f64,
    /// `max/min` of the scaled quantities over the grid (1 for identically zero).
    pub u_h_range_ratio: f64,
    /// `sup_φ |u⁰_{h,1}|` of the separatrix limit; `None` when Θ is not positive.
    pub u_h_limit: Option<f64>,
    /// `max|u_{h,1}|` increases towards the separatrix and stays below the limit.
    pub u_h_approaches_limit: bool,
    pub u_phi_range_ratio: f64,
    pub omega1_range_ratio: f64,
    pub hcut: Option<HcutStability>,
}

fn range_ratio(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let hi = v.iter().cloned().fold(0.0, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi == 0.0 {
        1.0
    } else {
        hi / lo
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn cmd_scaling(cfg: &ExperimentConfig) -> Result<ScalingReport> {
    cfg.validate()?;
    let chart = Chart::new(cfg.build_system()?);
    let w0 = cfg.w0(chart.system());
    let lambda = find_saddle(chart.system(), &w0)?.lambda;
    let entries = run_trials(cfg.execution, cfg.scaling_h.len(), |i| -> Result<ScalingEntry> {
        let h = cfg.scaling_h[i];
        let s = KernelSample::with_phi(&chart, h, &w0, DEFAULT_N_PHI, 0.0)?;
        let l = (1.0 / h).ln();
        let max_u_phi = max_abs(&s.u_phi);
        Ok(ScalingEntry {
            h,
            period: s.period,
            log_inv_h: l,
            max_u_h: max_abs(&s.u_h),
            max_u_phi,
            u_phi_scaled: max_u_phi * h * l,
            omega1: s.omega1,
            omega1_scaled: s.omega1.abs() * h,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = entries.iter().map(|e| e.log_inv_h).collect();
    let y: Vec<f64> = entries.iter().map(|e| e.period).collect();
    let (t_slope, _) = linear_fit(&x, &y);
    let t_slope_expected = 2.0 / lambda;
    let hcut = hcut_stability(&chart, cfg, &w0).ok();
    let u_h_limit = compute_theta(&chart, &w0).ok().filter(|t| check_theta(t.0, t.1).is_ok()).map(|t| u_h_limit_max(t.0, t.1));
    let u_h_approaches_limit = u_h_limit.is_some_and(|l| approaches(&entries, l));
    Ok(ScalingReport {
        lambda,
        t_slope,
        t_slope_expected,
        t_slope_rel_error: (t_slope - t_slope_expected).abs() / t_slope_expected,
        u_h_range_ratio: range_ratio(entries.iter().map(|e| e.max_u_h)),
        u_h_limit,
        u_h_approaches_limit,
        u_phi_range_ratio: range_ratio(entries.iter().map(|e| e.u_phi_scaled)),
        omega1_range_ratio: range_ratio(entries.iter().map(|e| e.omega1_scaled)),
        entries,
        hcut,
    })
}

/// Entries ordered by decreasing `h` have increasing `max|u_h|`, all below `limit`.
fn approaches(entries: &[ScalingEntry], limit: f64) -> bool {
    let mut e: Vec<&ScalingEntry> = entries.iter().collect();
    e.sort_by(|a, b| b.h.total_cmp(&a.h));
    e.windows(2).all(|p| p[1].max_u_h > p[0].max_u_h) && e.iter().all(|x| x.max_u_h < limit)
}

/// Prediction at `(h₀, w₀, φ₀, scaling_eps)` with the default cutoff and with
/// the cutoff doubled.
pub fn hcut_stability(chart: &Chart, cfg: &ExperimentConfig, w0: &[f64]) -> Result<HcutStability> {
    let eps = cfg.scaling_eps;
    let a = predict_pseudo_phase(chart, &cfg.flow, cfg.h0, w0, cfg.phi0, eps)?;
    let doubled = FlowConfig { h_cut_scale: 2.0 * cfg.flow.h_cut_scale, ..cfg.flow };
    let b = predict_pseudo_phase(chart, &doubled, cfg.h0, w0, cfg.phi0, eps)?;
    Ok(HcutStability {
        eps,
        phase: a.phase_fraction,
        phase_doubled: b.phase_fraction,
        difference: circular_distance(a.phase_fraction, b.phase_fraction),
    })
}

// ---------------------------------------------------------------- self-test

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfTestReport {
    pub tol_scale: f64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl SelfTestReport {
    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

struct Checks {
    scale: f64,
    out: Vec<Check>,
}

impl Checks {
    /// Passes when `value < threshold · scale`.
    fn below(&mut self, name: &str, value: Result<f64>, threshold: f64) {
        let t = threshold * self.scale;
        let c = match value {
            Ok(v) => Check { name: name.into(), pass: v < t, value: v, threshold: t, detail: String::new() },
            Err(e) => Check { name: name.into(), pass: false, value: f64::NAN, threshold: t, detail: e.to_string() },
        };
        self.out.push(c);
    }
}

/// Reduced invariant suites of all modules on the configured system, plus the
/// symmetric reference system. Thresholds are multiplied by `tol_scale`.
pub fn cmd_selftest(cfg: &ExperimentConfig, tol_scale: f64) -> Result<SelfTestReport> {
    cfg.validate()?;
    let sys = cfg.build_system()?;
    let chart = Chart::new(sys.clone());
    let w0 = cfg.w0(&sys);
    let w = w0.as_slice();
    let mut c = Checks { scale: tol_scale, out: Vec::new() };

    c.below(
        "saddle_energy",
        (|| {
            let mut m: f64 = 0.0;
            for i in 0..5 {
                let z = [w[0] - 0.1 + 0.05 * i as f64];
                let s = find_saddle(&sys, &z)?;
                m = m.max(sys.energy(s.location.0, s.location.1, &z).abs());
            }
            Ok(m)
        })(),
        1e-12,
    );

    c.below(
        "fh_definition",
        (|| {
            let mut rng = trial_rng(cfg.seed, u64::MAX);
            let mut m: f64 = 0.0;
            for _ in 0..20 {
                let x = PhasePoint::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), w);
                let g = sys.grad_h(x.q, x.p, &x.z);
                let f = sys.perturbation(x.q, x.p, &x.z, 0.0);
                let direct = g.q * f.q + g.p * f.p + g.z.iter().zip(&f.z).map(|(a, b)| a * b).sum::<f64>();
                m = m.max((sys.f_h(&x, 0.0) - direct).abs());
            }
            Ok(m)
        })(),
        1e-10,
    );

    for &h in &[0.5, 0.05] {
        c.below(&format!("orbit_energy_h{h}"), chart.orbit(h, w).map(|o| o.max_energy_error / h.max(1.0)), 1e-9);
        c.below(
            &format!("period_partials_h{h}"),
            chart.chart_partials(h, w).and_then(|p| {
                let o = chart.orbit(h, w)?;
                Ok((p.dt_dh * o.omega + o.period * p.domega_dh).abs() / (p.dt_dh * o.omega).abs().max(1.0))
            }),
            1e-6,
        );
    }

    c.below(
        "trace_identity",
        (|| {
            let mut m: f64 = 0.0;
            for &(h, phi) in &[(0.5, 0.3), (0.1, 2.0), (0.05, 4.5)] {
                m = m.max(chart.trace_residual(&AnglePoint::new(h, w, phi), 0.0, 1e-3)?.abs());
            }
            Ok(m)
        })(),
        1e-3,
    );

    for &h in &[0.5, 0.1] {
        let s = KernelSample::slow(&chart, h, w, 256, 0.0);
        c.below(
            &format!("homological_residual_h{h}"),
            s.as_ref().map_err(Clone::clone).map(|s| {
                let mut r = s.homological_residual(Slow::H, &s.u_h) / max_abs(&s.f_h).max(1.0);
                for i in 0..w.len() {
                    r = r.max(s.homological_residual(Slow::W(i), &s.u_w[i]) / max_abs(&s.f_w[i]).max(1.0));
                }
                r
            }),
            1e-6,
        );
        c.below(
            &format!("kernel_zero_mean_h{h}"),
            s.map(|s| {
                let mean = |v: &[f64]| (v.iter().sum::<f64>() / v.len() as f64).abs();
                s.u_w.iter().fold(mean(&s.u_h), |m, u| m.max(mean(u)))
            }),
            1e-10,
        );
    }

    // bounded by the separatrix limit and approaching it monotonically
    c.below(
        "u_h_bounded",
        (|| {
            let (t1, t2, _) = compute_theta(&chart, w)?;
            check_theta(t1, t2)?;
            let limit = u_h_limit_max(t1, t2);
            let mut prev = 0.0;
            let mut worst: f64 = 0.0;
            for &h in &[1e-1, 1e-2, 1e-3] {
                let m = max_abs(&KernelSample::slow(&chart, h, w, DEFAULT_N_PHI, 0.0)?.u_h);
                if m <= prev {
                    return Ok(f64::INFINITY);
                }
                prev = m;
                worst = worst.max(m / limit);
            }
            Ok(worst)
        })(),
        1.0,
    );

    c.below(
        "fbar2_cross_formula",
        fbar2(&chart, 0.1, w).map(|f| (f.fbar_h2 - f.fbar_h2_direct).abs() / f.h2_term_scale.max(f64::MIN_POSITIVE)),
        1e-4,
    );

    c.below(
        "theta_positive",
        compute_theta(&chart, w).and_then(|(t1, t2, t3)| {
            check_theta(t1, t2)?;
            Ok((t3 - t1 - t2).abs())
        }),
        1e-14,
    );

    let sym = Chart::new(make_duffing_eight(0.0, 1.0, 0.0));
    c.below(
        "theta_symmetric_closed_form",
        compute_theta(&sym, &[0.0]).map(|(t1, t2, _)| (t1 - 4.0 / 3.0).abs().max((t2 - 4.0 / 3.0).abs())),
        1e-6,
    );

    c.below(
        "unperturbed_return_time",
        (|| {
            let h = 0.3;
            let o = chart.orbit(h, w)?;
            let sim = Simulator::new(&chart, cfg.sim);
            let run = sim.integrate_perturbed(&o.start, 0.0, StopRule::CrossingAfter(0.5 * o.period), false)?;
            let t = run.log.crossings.last().ok_or(Error::NoCrossing)?.t;
            Ok((t - o.period).abs() / o.period)
        })(),
        1e-8,
    );

    let pass = c.out.iter().all(|x| x.pass);
    Ok(SelfTestReport { tol_scale, checks: c.out, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_independent_of_order() {
        let a: Vec<f64> = (0..4).map(|i| trial_rng(7, i).random()).collect();
        let b: Vec<f64> = (0..4).rev().map(|i| trial_rng(7, i).random()).collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let cfg = ExperimentConfig { eps: vec![1e-3, 4e-3, 2e-3], ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig { n_samples: 0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_json(r#"{"eps": [-1.0]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        let cfg = ExperimentConfig::from_json(r#"{"system":{"system":"duffing_eight","z0":0.1},"seed":3}"#).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.system.gamma, 1.0);
    }

    #[test]
    fn single_trial_has_no_sigma() {
        let e = ProbabilityEstimate::from_counts(Definition::Anosov, Domain::G1, &[Ok(Domain::G1)], 0.5, 1e-3, None);
        assert_eq!(e.estimate, 1.0);
        assert!(e.std_error.is_none() && e.deviation_sigma.is_none());
        let e = ProbabilityEstimate::from_counts(
            Definition::Anosov,
            Domain::G1,
            &[Ok(Domain::G1), Ok(Domain::G2), Err(Error::NoCrossing), Ok(Domain::G2)],
            0.5,
            1e-3,
            None,
        );
        assert_eq!((e.n, e.n_target, e.n_failed), (3, 1, 1));
        assert!((e.std_error.unwrap() - (2.0f64 / 27.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn manifest_hash_tracks_config() {
        let a = Manifest::new("x", &ExperimentConfig::default());
        let b = Manifest::new("x", &ExperimentConfig { seed: 2, ..Default::default() });
        assert_eq!(a.config_hash.len(), 64);
        assert_ne!(a.config_hash, b.config_hash);
        assert_eq!(a, Manifest::new("x", &ExperimentConfig::default()));
    }
}
