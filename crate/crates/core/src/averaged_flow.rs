//! Averaged system of orders 1 and 2, its approach to the separatrix and the
//! pseudo-phase prediction.

use std::cell::RefCell;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::angle_chart::{AnglePoint, Chart};
use crate::averaging_kernel::{hat_coefficients_with, shift_initial, u1, AveragedCoefficients, Slow, DEFAULT_N_PHI};
use crate::direct_sim::{SimConfig, Simulator, StopRule};
use crate::error::{Error, Result};
use crate::numerics::{brent, frac};
use crate::ode::{Control, DenseTrajectory, Dop853, Tolerances};
use crate::separatrix::{check_theta, compute_theta, trace_loops, DEFAULT_DELTA_SAD};
use crate::system_model::Params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowConfig {
    /// Multiplier on the default cutoff `max(10ε, ε^{2/3} ln^{-1/3}(1/ε))`.
    pub h_cut_scale: f64,
    /// `h_switch = h_switch_factor · h_cut`.
    pub h_switch_factor: f64,
    pub rtol: f64,
    pub atol: f64,
    pub n_phi: usize,
    /// Comparisons are refused below `ĥ = c2 ε`.
    pub c2: f64,
    /// The flow is integrated on to `h_tail = tail_depth · h_cut` (at least
    /// ten times the chart floor) before the analytic tails are attached;
    /// `1.0` attaches them at `h_cut` itself.
    pub tail_depth: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { h_cut_scale: 1.0, h_switch_factor: 10.0, rtol: 1e-10, atol: 1e-13, n_phi: DEFAULT_N_PHI, c2: 20.0, tail_depth: 1e-3 }
    }
}

pub fn default_h_cut(eps: f64) -> f64 {
    let l = (1.0 / eps).ln();
    (10.0 * eps).max(eps.powf(2.0 / 3.0) * l.powf(-1.0 / 3.0))
}

impl FlowConfig {
    pub fn h_cut(&self, eps: f64) -> f64 {
        self.h_cut_scale * default_h_cut(eps)
    }

    pub fn h_tail(&self, chart: &Chart, eps: f64) -> f64 {
        let h_cut = self.h_cut(eps);
        (self.tail_depth.min(1.0) * h_cut).max(10.0 * chart.config().h_floor).min(h_cut)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AveragedSample {
    pub tau: f64,
    pub h: f64,
    pub w: Params,
    /// `∫₀^τ (ω + ε ω₁) dτ`.
    pub phase: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AveragedTrajectory {
    pub order: Order,
    pub eps: f64,
    pub samples: Vec<AveragedSample>,
    pub h_cut: f64,
    pub h_switch: f64,
    pub tau_switch: f64,
    /// Values at `ĥ = h_cut`.
    pub tau_cut: f64,
    pub w_cut: Params,
    pub phase_cut: f64,
    /// Values at the deeper point `h_tail ≤ h_cut` where the analytic tails
    /// are attached.
    pub h_tail: f64,
    pub tau_tail: f64,
    pub w_tail: Params,
    pub phase_tail: f64,
    /// Extrapolated to `ĥ = 0`.
    pub tau_star: f64,
    pub w_star: Params,
    pub steps: usize,
    pub rhs_evals: usize,
    /// State `(ĥ, ŵ, Φ)` against `τ` up to `h_switch`.
    #[serde(skip)]
    tau_part: DenseTrajectory,
    /// State `(τ, ŵ, Φ)` against `σ = −ln ĥ` from `h_switch` to `h_tail`.
    #[serde(skip)]
    h_part: DenseTrajectory,
}

impl AveragedTrajectory {
    /// `(ĥ, ŵ)` at slow time `τ ∈ [0, τ_tail]`.
    pub fn state_at_tau(&self, tau: f64) -> Option<(f64, Params)> {
        if tau < 0.0 || tau > self.tau_tail {
            return None;
        }
        let k = self.w_cut.len();
        if !self.tau_part.segments().is_empty() && tau <= self.tau_switch {
            let y = self.tau_part.eval(tau);
            return Some((y[0], Params::from_slice(&y[1..1 + k])));
        }
        let mut buf = vec![0.0; 2 + k];
        let s = brent(
            |s| {
                self.h_part.eval_into(s, &mut buf);
                buf[0] - tau
            },
            self.h_part.t_start(),
            self.h_part.t_end(),
            1e-15,
            200,
        )?;
        self.h_part.eval_into(s, &mut buf);
        Some(((-s).exp(), Params::from_slice(&buf[1..1 + k])))
    }
}

struct Rates {
    h: f64,
    w: Params,
    phase: f64,
}

fn rates(c: &AveragedCoefficients, order: Order, eps: f64) -> Rates {
    let two = if order == Order::Two { eps } else { 0.0 };
    Rates {
        h: c.fbar_h1 + two * c.fhat_h2,
        w: (0..c.w.len()).map(|i| c.fbar_w1[i] + two * c.fhat_w2[i]).collect(),
        phase: c.omega + eps * c.omega1,
    }
}

/// Integrates the averaged system from `(ĥ₀, ŵ₀)` to `ĥ = h_stop`; in slow
/// time above `h_switch`, with `−ln ĥ` as independent variable below it, and
/// on to `h_tail`.
fn integrate_to(
    chart: &Chart,
    cfg: &FlowConfig,
    order: Order,
    h0: f64,
    w0: &[f64],
    eps: f64,
    h_stop: f64,
    h_switch: f64,
    h_tail: f64,
) -> Result<AveragedTrajectory> {
    if h0 <= h_stop {
        return Err(Error::CutoffTooLarge { h_cut: h_stop, h0 });
    }
    let k = w0.len();
    let n_phi = cfg.n_phi;
    let error: RefCell<Option<Error>> = RefCell::new(None);
    let coeffs = |h: f64, w: &[f64]| -> Option<Rates> {
        if error.borrow().is_some() {
            return None;
        }
        match hat_coefficients_with(chart, h, w, n_phi) {
            Ok(c) => {
                let r = rates(&c, order, eps);
                if r.h >= 0.0 {
                    *error.borrow_mut() = Some(Error::ThetaSignError { h, rate: r.h });
                    return None;
                }
                Some(r)
            }
            Err(e) => {
                *error.borrow_mut() = Some(e);
                None
            }
        }
    };
    let solver = Dop853::new(Tolerances::new(cfg.rtol, cfg.atol)).with_max_steps(200_000);
    let mut samples = vec![AveragedSample { tau: 0.0, h: h0, w: Params::from_slice(w0), phase: 0.0 }];
    let mut steps = 0;
    let mut rhs_evals = 0;

    // slow-time part
    let mut tau_part = DenseTrajectory::new();
    let mut y_switch: Vec<f64> = std::iter::once(h0).chain(w0.iter().copied()).chain(std::iter::once(0.0)).collect();
    let mut tau_switch = 0.0;
    let h_switch = h_switch.max(h_stop);
    if h0 > h_switch {
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| match coeffs(y[0], &y[1..1 + k]) {
            Some(r) => {
                dy[0] = r.h;
                dy[1..1 + k].copy_from_slice(&r.w);
                dy[1 + k] = r.phase;
            }
            None => dy.iter_mut().for_each(|d| *d = f64::NAN),
        };
        let mut hit = None;
        let out = solver.integrate(rhs, 0.0, &y_switch, 1e6, |step| {
            let seg = step.take_dense();
            if step.y_new[0] <= h_switch {
                let mut buf = vec![0.0; 2 + k];
                let t = brent(
                    |t| {
                        seg.eval_into(t, &mut buf);
                        buf[0] - h_switch
                    },
                    step.t_old,
                    step.t_new,
                    1e-14,
                    200,
                )
                .unwrap_or(step.t_new);
                tau_part.push(seg);
                hit = Some(t);
                return Control::StopAt(t);
            }
            tau_part.push(seg);
            samples.push(AveragedSample {
                tau: step.t_new,
                h: step.y_new[0],
                w: Params::from_slice(&step.y_new[1..1 + k]),
                phase: step.y_new[1 + k],
            });
            Control::Continue
        });
        if let Some(e) = error.borrow_mut().take() {
            return Err(e);
        }
        let out = out?;
        steps += out.steps;
        rhs_evals += out.rhs_evals;
        tau_switch = hit.ok_or(Error::NoConvergence)?;
        y_switch = out.y;
        y_switch[0] = h_switch;
        samples.push(AveragedSample { tau: tau_switch, h: h_switch, w: Params::from_slice(&y_switch[1..1 + k]), phase: y_switch[1 + k] });
    }

    // energy part: state (τ, ŵ, Φ) against σ = −ln ĥ
    let h_start = h0.min(h_switch);
    let mut h_part = DenseTrajectory::new();
    let y0: Vec<f64> = std::iter::once(tau_switch)
        .chain(y_switch[1..1 + k].iter().copied())
        .chain(std::iter::once(y_switch[1 + k]))
        .collect();
    let rhs = |sigma: f64, y: &[f64], dy: &mut [f64]| {
        let h = (-sigma).exp();
        match coeffs(h, &y[1..1 + k]) {
            Some(r) => {
                let inv = -h / r.h;
                dy[0] = inv;
                for i in 0..k {
                    dy[1 + i] = r.w[i] * inv;
                }
                dy[1 + k] = r.phase * inv;
            }
            None => dy.iter_mut().for_each(|d| *d = f64::NAN),
        }
    };
    let y_end = if h_start > h_tail {
        let out = solver.integrate(rhs, -h_start.ln(), &y0, -h_tail.ln(), |step| {
            h_part.push(step.take_dense());
            samples.push(AveragedSample {
                tau: step.y_new[0],
                h: (-step.t_new).exp(),
                w: Params::from_slice(&step.y_new[1..1 + k]),
                phase: step.y_new[1 + k],
            });
            Control::Continue
        });
        if let Some(e) = error.borrow_mut().take() {
            return Err(e);
        }
        let out = out?;
        steps += out.steps;
        rhs_evals += out.rhs_evals;
        out.y
    } else {
        y0.clone()
    };
    let at_cut = if h_part.segments().is_empty() { y0 } else { h_part.eval(-h_stop.ln()) };
    let tau_cut = at_cut[0];
    let w_cut = Params::from_slice(&at_cut[1..1 + k]);
    let phase_cut = at_cut[1 + k];
    let tau_tail = y_end[0];
    let w_tail = Params::from_slice(&y_end[1..1 + k]);
    let phase_tail = y_end[1 + k];

    // extrapolate over [0, h_tail] with dτ/dĥ ≈ −T(ĥ)/Θ₃ and dŵ/dĥ frozen
    let c = hat_coefficients_with(chart, h_tail, &w_tail, n_phi)?;
    let r = rates(&c, order, eps);
    let w_star: Params = (0..k).map(|i| w_tail[i] - h_tail * r.w[i] / r.h).collect();
    let theta3 = trace_loops(chart, &w_tail, DEFAULT_DELTA_SAD)?.theta3;
    let lambda = chart.saddle(&w_tail)?.lambda;
    let tau_star = tau_tail + h_tail * (c.period + 2.0 / lambda) / theta3;

    Ok(AveragedTrajectory {
        order,
        eps,
        samples,
        h_cut: h_stop,
        h_switch,
        tau_switch,
        tau_cut,
        w_cut,
        phase_cut,
        h_tail,
        tau_tail,
        w_tail,
        phase_tail,
        tau_star,
        w_star,
        steps,
        rhs_evals,
        tau_part,
        h_part,
    })
}

/// Averaged flow from `v̂₀` down to the cutoff `h_cut` of `cfg`.
pub fn integrate_averaged(chart: &Chart, cfg: &FlowConfig, order: Order, h0: f64, w0: &[f64], eps: f64) -> Result<AveragedTrajectory> {
    let h_cut = cfg.h_cut(eps);
    let h_tail = cfg.h_tail(chart, eps);
    integrate_to(chart, cfg, order, h0, w0, eps, h_cut, cfg.h_switch_factor * h_cut, h_tail)
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseIntegral {
    /// `∫₀^{τ(h_cut)} (ω + ε ω₁) dτ`.
    pub numeric: f64,
    /// `2π h_cut / Θ₃*`.
    pub omega_tail: f64,
    /// `−ε (2π/Θ₃*) (u_* − u⁰_{h,1}(h_cut, ŵ, 0))`.
    pub omega1_tail: f64,
    pub u_h_cut: f64,
    /// `numeric + omega_tail + omega1_tail`.
    pub total_at_cut: f64,
    /// `∫_{τ(h_cut)}^{τ(h_tail)} (ω + ε ω₁) dτ`.
    pub numeric_below_cut: f64,
    pub omega_tail_deep: f64,
    pub omega1_tail_deep: f64,
    pub u_h_tail: f64,
    /// Same assembly with the tails attached at `h_tail`; this is the value
    /// used by the prediction.
    pub total: f64,
}

/// `u_*`, the `h → 0` limit of `u⁰_{h,1}(h, w, 0)`: `(Θ₂ − Θ₁)/4` with loop 2
/// followed during `0 < φ < π`.
pub fn u_star(theta1: f64, theta2: f64) -> f64 {
    0.25 * (theta2 - theta1)
}

pub fn phase_integral(chart: &Chart, traj: &AveragedTrajectory) -> Result<PhaseIntegral> {
    let eps = traj.eps;
    let (t1, t2, t3) = compute_theta(chart, &traj.w_star)?;
    let us = u_star(t1, t2);
    let tails = |h: f64, w: &[f64]| -> Result<(f64, f64, f64)> {
        let u = u1(chart, Slow::H, h, w, 0.0, 0.0)?;
        Ok((TAU * h / t3, -eps * TAU / t3 * (us - u), u))
    };
    let (omega_tail, omega1_tail, u_h_cut) = tails(traj.h_cut, &traj.w_cut)?;
    let (omega_tail_deep, omega1_tail_deep, u_h_tail) = if traj.h_tail < traj.h_cut {
        tails(traj.h_tail, &traj.w_tail)?
    } else {
        (omega_tail, omega1_tail, u_h_cut)
    };
    Ok(PhaseIntegral {
        numeric: traj.phase_cut,
        omega_tail,
        omega1_tail,
        u_h_cut,
        total_at_cut: traj.phase_cut + omega_tail + omega1_tail,
        numeric_below_cut: traj.phase_tail - traj.phase_cut,
        omega_tail_deep,
        omega1_tail_deep,
        u_h_tail,
        total: traj.phase_tail + omega_tail_deep + omega1_tail_deep,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PseudoPhasePrediction {
    pub phase_fraction: f64,
    /// The fraction obtained with the tails attached at `h_cut` itself.
    pub phase_fraction_at_cut: f64,
    /// `φ₀ / 2π`.
    pub phi0_term: f64,
    /// `phase_integral / (2π ε)`.
    pub integral_term: f64,
    /// `u_* / Θ₃*`.
    pub u_star_term: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
    pub u_star: f64,
    pub eps: f64,
    pub h0_hat: f64,
    pub w0_hat: Params,
    pub tau_star: f64,
    pub w_star: Params,
    pub h_cut: f64,
    pub integral: PhaseIntegral,
    /// `ε^{1/3} ln^{1/3}(1/ε)`, reported only.
    pub error_scale: f64,
}

/// Pseudo-phase `{(φ₀ + Φ/ε)/2π + u_*/Θ₃*}` for a start at `(h₀, w₀, φ₀)`.
pub fn predict_pseudo_phase(chart: &Chart, cfg: &FlowConfig, h0: f64, w0: &[f64], phi0: f64, eps: f64) -> Result<PseudoPhasePrediction> {
    let (h_hat, w_hat) = shift_initial(chart, h0, w0, phi0, eps)?;
    let traj = integrate_averaged(chart, cfg, Order::Two, h_hat, &w_hat, eps)?;
    let integral = phase_integral(chart, &traj)?;
    let (t1, t2, t3) = compute_theta(chart, &traj.w_star)?;
    check_theta(t1, t2)?;
    let us = u_star(t1, t2);
    let phi0_term = phi0 / TAU;
    let integral_term = integral.total / (TAU * eps);
    let u_star_term = us / t3;
    Ok(PseudoPhasePrediction {
        phase_fraction: frac(phi0_term + integral_term + u_star_term),
        phase_fraction_at_cut: frac(phi0_term + integral.total_at_cut / (TAU * eps) + u_star_term),
        phi0_term,
        integral_term,
        u_star_term,
        theta1: t1,
        theta2: t2,
        theta3: t3,
        u_star: us,
        eps,
        h0_hat: h_hat,
        w0_hat: w_hat,
        tau_star: traj.tau_star,
        w_star: traj.w_star.clone(),
        h_cut: traj.h_cut,
        integral,
        error_scale: (eps * (1.0 / eps).ln()).powf(1.0 / 3.0),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub eps: f64,
    pub order: Order,
    pub h_stop: f64,
    /// Fast time of the true-trajectory transversal crossing used.
    pub t_eval: f64,
    pub tau_eval: f64,
    pub h_true: f64,
    pub w_true: Params,
    /// `v − ε u⁰_{v,1}(v, 0)`.
    pub h_bar: f64,
    pub w_bar: Params,
    pub h_avg: f64,
    pub w_avg: Params,
    pub error: f64,
}

/// Distance between the pulled-back true solution and the averaged solution
/// at the first transversal crossing after the averaged flow reaches
/// `h_stop`.
pub fn compare_to_true(
    chart: &Chart,
    cfg: &FlowConfig,
    sim: &SimConfig,
    order: Order,
    h0: f64,
    w0: &[f64],
    phi0: f64,
    eps: f64,
    h_stop: f64,
) -> Result<CompareReport> {
    if h_stop <= cfg.c2 * eps {
        return Err(Error::Config(format!("h_stop = {h_stop} is not above {} ε", cfg.c2)));
    }
    let k = w0.len();
    let (h_hat, w_hat) = shift_initial(chart, h0, w0, phi0, eps)?;
    // slightly below h_stop so the crossing after τ_stop is still covered
    let h_end = 0.5 * h_stop;
    let traj = integrate_to(chart, cfg, order, h_hat, &w_hat, eps, h_end, h_end, h_end)?;
    let tau_stop = crossing_tau(&traj, h_stop).ok_or(Error::NoConvergence)?;

    let x0 = chart.from_angle(&AnglePoint::new(h0, w0, phi0))?;
    let simulator = Simulator::new(chart, *sim);
    let run = simulator.integrate_perturbed(&x0, eps, StopRule::CrossingAfter(tau_stop / eps), false)?;
    let c = run.log.crossings.last().filter(|c| c.t >= tau_stop / eps).ok_or(Error::NoCrossing)?;
    let h_true = c.h;
    let w_true = c.w.clone();
    let h_bar = h_true - eps * u1(chart, Slow::H, h_true, &w_true, 0.0, 0.0)?;
    let mut w_bar = Params::new();
    for i in 0..k {
        w_bar.push(w_true[i] - eps * u1(chart, Slow::W(i), h_true, &w_true, 0.0, 0.0)?);
    }
    let tau_eval = eps * c.t;
    let (h_avg, w_avg) = traj.state_at_tau(tau_eval).ok_or(Error::NoConvergence)?;
    let mut err2 = (h_bar - h_avg).powi(2);
    for i in 0..k {
        err2 += (w_bar[i] - w_avg[i]).powi(2);
    }
    Ok(CompareReport {
        eps,
        order,
        h_stop,
        t_eval: c.t,
        tau_eval,
        h_true,
        w_true,
        h_bar,
        w_bar,
        h_avg,
        w_avg,
        error: err2.sqrt(),
    })
}

fn crossing_tau(traj: &AveragedTrajectory, h: f64) -> Option<f64> {
    let w = traj.samples.windows(2).find(|w| w[0].h >= h && w[1].h < h)?;
    brent(|tau| traj.state_at_tau(tau).map_or(f64::NAN, |(hh, _)| hh - h), w[0].tau, w[1].tau, 1e-14, 200)
}
