//! First-order averaging functions and the means that define the averaged
//! system of order two.
//!
//! Everything is sampled on the uniform grid `φ_j = 2π j / N`. The homological
//! equations `ω ∂u/∂φ = Y − ⟨Y⟩`, `⟨u⟩ = 0` are solved spectrally. The point
//! evaluator [`u1`] uses the explicit time integral instead and serves as an
//! independent route.

use std::f64::consts::TAU;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;
use smallvec::smallvec;

use crate::angle_chart::{f_components_from, Chart, OrbitPoint, OrbitSample};
use crate::error::{Error, Result};
use crate::system_model::{Jacobian, Params, PhasePoint};

pub const DEFAULT_N_PHI: usize = 512;

/// Relative `h` step for the `ω ∂/∂h` term of `f̄_{w,2}`.
pub const DH_REL_FBAR2: f64 = 1e-3;

/// Slow variable selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slow {
    H,
    W(usize),
}

fn fft(data: &mut [Complex64], inverse: bool) {
    let mut planner = FftPlanner::new();
    let plan = if inverse { planner.plan_fft_inverse(data.len()) } else { planner.plan_fft_forward(data.len()) };
    plan.process(data);
}

fn wavenumber(j: usize, n: usize) -> f64 {
    if j <= n / 2 {
        j as f64
    } else {
        j as f64 - n as f64
    }
}

/// Solves `ω u' = g − ⟨g⟩`, `⟨u⟩ = 0` on a uniform periodic grid. Returns
/// `(⟨g⟩, u)`.
pub fn solve_homological(g: &[f64], omega: f64) -> (f64, Vec<f64>) {
    let n = g.len();
    let mut buf: Vec<Complex64> = g.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut buf, false);
    let mean = buf[0].re / n as f64;
    buf[0] = Complex64::new(0.0, 0.0);
    for (j, c) in buf.iter_mut().enumerate().skip(1) {
        if n % 2 == 0 && j == n / 2 {
            *c = Complex64::new(0.0, 0.0);
            continue;
        }
        let k = wavenumber(j, n);
        *c /= Complex64::new(0.0, k * omega);
    }
    fft(&mut buf, true);
    let mut u: Vec<f64> = buf.iter().map(|c| c.re / n as f64).collect();
    // remove the rounding-level mean
    let m = u.iter().sum::<f64>() / n as f64;
    for v in &mut u {
        *v -= m;
    }
    (mean, u)
}

/// Spectral derivative `∂/∂φ` on a uniform periodic grid (Nyquist mode dropped).
pub fn spectral_derivative(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut buf: Vec<Complex64> = u.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut buf, false);
    for (j, c) in buf.iter_mut().enumerate() {
        if n % 2 == 0 && j == n / 2 {
            *c = Complex64::new(0.0, 0.0);
            continue;
        }
        *c *= Complex64::new(0.0, wavenumber(j, n));
    }
    fft(&mut buf, true);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Share of spectral mass in the upper half of the resolved band; a cheap
/// resolution indicator.
pub fn spectral_tail(g: &[f64]) -> f64 {
    let n = g.len();
    let mut buf: Vec<Complex64> = g.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut buf, false);
    let mut total = 0.0;
    let mut tail = 0.0;
    for (j, c) in buf.iter().enumerate().skip(1) {
        let k = wavenumber(j, n).abs();
        total += c.norm();
        if k > n as f64 / 4.0 {
            tail += c.norm();
        }
    }
    if total == 0.0 {
        0.0
    } else {
        tail / total
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_prod(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// First-order kernel on the φ-grid at `(h, w)` for the field `f(·, ε)`.
#[derive(Debug, Clone, Serialize)]
pub struct KernelSample {
    pub h: f64,
    pub w: Params,
    pub n: usize,
    pub eps: f64,
    pub omega: f64,
    pub period: f64,
    pub domega_dh: f64,
    pub domega_dw: Params,
    pub phi: Vec<f64>,
    pub f_h: Vec<f64>,
    /// `f_w[i][j]` is component `i` at node `j`.
    pub f_w: Vec<Vec<f64>>,
    pub f_phi: Vec<f64>,
    pub fbar_h1: f64,
    pub fbar_w1: Params,
    pub fbar_phi1: f64,
    pub u_h: Vec<f64>,
    pub u_w: Vec<Vec<f64>>,
    /// Only present when built with [`KernelSample::with_phi`].
    pub u_phi: Vec<f64>,
    pub omega1: f64,
    #[serde(skip)]
    points: Vec<OrbitPoint>,
}

impl KernelSample {
    /// Slow components only (`f_h`, `f_w`, `u_h`, `u_w`).
    pub fn slow(chart: &Chart, h: f64, w: &[f64], n: usize, eps: f64) -> Result<Self> {
        let orbit = chart.orbit(h, w)?;
        Ok(Self::build(chart, &orbit, n, eps, false))
    }

    /// Full sample including `f_φ`, `ω₁` and `u_φ`.
    pub fn with_phi(chart: &Chart, h: f64, w: &[f64], n: usize, eps: f64) -> Result<Self> {
        let orbit = chart.orbit(h, w)?;
        Ok(Self::build(chart, &orbit, n, eps, true))
    }

    fn build(chart: &Chart, orbit: &OrbitSample, n: usize, eps: f64, with_phi: bool) -> Self {
        let sys = chart.system();
        let k = orbit.w.len();
        let points = orbit.grid(sys, n);
        let omega = orbit.omega;
        let period = orbit.period;
        let domega_dh = -omega * orbit.dt_dh / period;
        let domega_dw: Params = orbit.dt_dw.iter().map(|d| -omega * d / period).collect();
        let mut f_h = Vec::with_capacity(n);
        let mut f_w = vec![Vec::with_capacity(n); k];
        let mut f_phi = Vec::with_capacity(n);
        for pt in &points {
            let f = sys.perturbation(pt.x.q, pt.x.p, &pt.x.z, eps);
            let comps = f_components_from(sys, omega, pt, &f);
            f_h.push(comps.f_h);
            for i in 0..k {
                f_w[i].push(comps.f_w[i]);
            }
            f_phi.push(comps.f_phi);
        }
        let (fbar_h1, u_h) = solve_homological(&f_h, omega);
        let mut fbar_w1 = Params::new();
        let mut u_w = Vec::with_capacity(k);
        for fw in &f_w {
            let (m, u) = solve_homological(fw, omega);
            fbar_w1.push(m);
            u_w.push(u);
        }
        let fbar_phi1 = mean(&f_phi);
        let (omega1, u_phi) = if with_phi {
            let y: Vec<f64> = (0..n)
                .map(|j| f_phi[j] + domega_dh * u_h[j] + (0..k).map(|i| domega_dw[i] * u_w[i][j]).sum::<f64>())
                .collect();
            solve_homological(&y, omega)
        } else {
            (fbar_phi1, Vec::new())
        };
        Self {
            h: orbit.h,
            w: orbit.w.clone(),
            n,
            eps,
            omega,
            period,
            domega_dh,
            domega_dw,
            phi: points.iter().map(|p| p.phi).collect(),
            f_h,
            f_w,
            f_phi,
            fbar_h1,
            fbar_w1,
            fbar_phi1,
            u_h,
            u_w,
            u_phi,
            omega1,
            points,
        }
    }

    pub fn f_slow(&self, a: Slow) -> &[f64] {
        match a {
            Slow::H => &self.f_h,
            Slow::W(i) => &self.f_w[i],
        }
    }

    pub fn u_slow(&self, a: Slow) -> &[f64] {
        match a {
            Slow::H => &self.u_h,
            Slow::W(i) => &self.u_w[i],
        }
    }

    pub fn fbar_slow(&self, a: Slow) -> f64 {
        match a {
            Slow::H => self.fbar_h1,
            Slow::W(i) => self.fbar_w1[i],
        }
    }

    pub fn points(&self) -> &[OrbitPoint] {
        &self.points
    }

    /// Max over the grid of `|ω D_φ u − (f − f̄)|` for a slow component, with
    /// `u` taken from `u_values`.
    pub fn homological_residual(&self, a: Slow, u_values: &[f64]) -> f64 {
        let du = spectral_derivative(u_values);
        let f = self.f_slow(a);
        let fbar = self.fbar_slow(a);
        du.iter().zip(f).map(|(d, fv)| (self.omega * d - (fv - fbar)).abs()).fold(0.0, f64::max)
    }
}

/// `u_{a,1}(h, w, φ₀) = (1/T) ∫₀^T (t − T/2) f_a(t + t₀) dt`, `t₀ = φ₀ T / 2π`,
/// by adaptive Gauss-Kronrod on the dense orbit.
pub fn u1(chart: &Chart, a: Slow, h: f64, w: &[f64], phi0: f64, eps: f64) -> Result<f64> {
    let orbit = chart.orbit(h, w)?;
    let sys = chart.system();
    let period = orbit.period;
    let t0 = crate::numerics::wrap_angle(phi0) * period / TAU;
    let fa = |q: f64, p: f64| -> f64 {
        let x = PhasePoint::new(q, p, w);
        match a {
            Slow::H => sys.f_h(&x, eps),
            Slow::W(i) => sys.perturbation(q, p, w, eps).z[i],
        }
    };
    // substitute s = t + t0 and fold the part past T back onto [0, t0]
    let part1 = orbit.integrate_time_range(t0, period, |s, q, p| (s - t0 - 0.5 * period) * fa(q, p));
    let part2 = orbit.integrate_time_range(0.0, t0, |s, q, p| (s + 0.5 * period - t0) * fa(q, p));
    Ok((part1 + part2) / period)
}

/// `⟨f_a⟩_φ` for `a ∈ {h, w_i}`, or `⟨f_φ⟩_φ` when `a` is `None`.
pub fn fbar1(chart: &Chart, a: Option<Slow>, h: f64, w: &[f64], eps: f64) -> Result<f64> {
    let s = if a.is_none() {
        KernelSample::with_phi(chart, h, w, DEFAULT_N_PHI, eps)?
    } else {
        KernelSample::slow(chart, h, w, DEFAULT_N_PHI, eps)?
    };
    Ok(match a {
        Some(a) => s.fbar_slow(a),
        None => s.fbar_phi1,
    })
}

/// `ω₁ = ⟨f_φ + ∂ω/∂h u_h + Σ ∂ω/∂w_i u_{w_i}⟩` for the field `f⁰`.
pub fn omega1(chart: &Chart, h: f64, w: &[f64]) -> Result<f64> {
    Ok(KernelSample::with_phi(chart, h, w, DEFAULT_N_PHI, 0.0)?.omega1)
}

/// `u_{φ,1}` on the default grid for the field `f⁰`.
pub fn u_phi1(chart: &Chart, h: f64, w: &[f64]) -> Result<Vec<f64>> {
    Ok(KernelSample::with_phi(chart, h, w, DEFAULT_N_PHI, 0.0)?.u_phi)
}

/// `𝓘(h, w) = ∫₀^{2π} t(φ) f⁰_h dφ`, by quadrature in time.
pub fn curly_i(chart: &Chart, h: f64, w: &[f64]) -> Result<f64> {
    let orbit = chart.orbit(h, w)?;
    let sys = chart.system();
    let integral = orbit.integrate_time_range(0.0, orbit.period, |t, q, p| t * sys.f_h(&PhasePoint::new(q, p, w), 0.0));
    Ok(TAU / orbit.period * integral)
}

/// `(ω₁, (1/T) ∂𝓘/∂h)`; the two agree up to `O(h^{-1/2} ln^{-1} h)`.
pub fn omega1_diagnostic(chart: &Chart, h: f64, w: &[f64]) -> Result<(f64, f64)> {
    let om1 = omega1(chart, h, w)?;
    let dh = 1e-4 * h;
    let d = (curly_i(chart, h + dh, w)? - curly_i(chart, h - dh, w)?) / (2.0 * dh);
    Ok((om1, d / chart.period(h, w)?))
}

/// Second-order means by the production formula and by the direct
/// `⟨∂f/∂h u_h + ∂f/∂w u_w + ∂f/∂φ u_φ⟩` route.
#[derive(Debug, Clone, Serialize)]
pub struct Fbar2 {
    pub fbar_h2: f64,
    pub fbar_w2: Params,
    pub fbar_h2_direct: f64,
    pub fbar_w2_direct: Params,
    /// Size of the largest single term entering `f̄_{h,2}`; the natural scale
    /// for comparing the two routes when the mean itself cancels.
    pub h2_term_scale: f64,
}

struct NodeDerivs {
    div: f64,
    /// `∂f_h/∂h`, `∂f_h/∂w_i`, `∂f_h/∂φ`.
    dfh_dh: f64,
    dfh_dw: Params,
    dfh_dphi: f64,
    /// `dfw_dw[a][i] = ∂f_{w_a}/∂w_i`.
    dfw_dw: Vec<Params>,
    dfw_dh: Params,
    dfw_dphi: Params,
}

fn node_derivs(chart: &Chart, s: &KernelSample, j: usize) -> NodeDerivs {
    let sys = chart.system();
    let k = s.w.len();
    let pt = &s.points[j];
    let x = &pt.x;
    let gfh = sys.fh_gradient(x, s.eps);
    let jac: Jacobian = sys.perturbation_jacobian(x.q, x.p, &x.z, s.eps);
    let div = jac.trace();
    let vel = (pt.flow.0 / s.omega, pt.flow.1 / s.omega);
    let dfh_dh = gfh.q * pt.x_h.0 + gfh.p * pt.x_h.1;
    let dfh_dphi = gfh.q * vel.0 + gfh.p * vel.1;
    let dfh_dw = (0..k).map(|i| gfh.q * pt.x_w[i].0 + gfh.p * pt.x_w[i].1 + gfh.z[i]).collect();
    let mut dfw_dw = Vec::with_capacity(k);
    let mut dfw_dh = Params::new();
    let mut dfw_dphi = Params::new();
    for a in 0..k {
        let row = 2 + a;
        let (gq, gp) = (jac.get(row, 0), jac.get(row, 1));
        dfw_dh.push(gq * pt.x_h.0 + gp * pt.x_h.1);
        dfw_dphi.push(gq * vel.0 + gp * vel.1);
        dfw_dw.push((0..k).map(|i| gq * pt.x_w[i].0 + gp * pt.x_w[i].1 + jac.get(row, 2 + i)).collect());
    }
    NodeDerivs { div, dfh_dh, dfh_dw, dfh_dphi, dfw_dw, dfw_dh, dfw_dphi }
}

/// `T(h) ⟨f_a u_h⟩_φ = ∫₀^T f_a u_h dt` on a fresh grid at `h`.
fn int_fa_uh(chart: &Chart, a: usize, h: f64, w: &[f64], n: usize, eps: f64) -> Result<f64> {
    let s = KernelSample::slow(chart, h, w, n, eps)?;
    Ok(s.period * mean_prod(&s.f_w[a], &s.u_h))
}

/// `f̄_{h,2}`, `f̄_{w,2}` for the field `f(·, ε)` on an `n`-node grid.
pub fn fbar2_with(chart: &Chart, h: f64, w: &[f64], n: usize, eps: f64) -> Result<Fbar2> {
    let s = KernelSample::with_phi(chart, h, w, n, eps)?;
    fbar2_from_sample(chart, &s)
}

pub fn fbar2(chart: &Chart, h: f64, w: &[f64]) -> Result<Fbar2> {
    fbar2_with(chart, h, w, DEFAULT_N_PHI, 0.0)
}

fn fbar2_from_sample(chart: &Chart, s: &KernelSample) -> Result<Fbar2> {
    let n = s.n;
    let k = s.w.len();
    let derivs: Vec<NodeDerivs> = (0..n).map(|j| node_derivs(chart, s, j)).collect();
    let inv_omega = 1.0 / s.omega;

    // production formula for h
    let mut acc = 0.0;
    let mut scale: f64 = 0.0;
    for (j, d) in derivs.iter().enumerate() {
        let sum_dfw: f64 = (0..k).map(|i| d.dfw_dw[i][i]).sum();
        let t1 = (d.div - sum_dfw) * s.u_h[j];
        let t2: f64 = (0..k).map(|i| d.dfh_dw[i] * s.u_w[i][j]).sum();
        acc += t1 + t2;
        scale = scale.max(t1.abs()).max(t2.abs());
    }
    let mut fbar_h2 = acc / n as f64;
    for i in 0..k {
        fbar_h2 -= inv_omega * s.domega_dw[i] * mean_prod(&s.f_h, &s.u_w[i]);
    }

    // direct route for h
    let mut acc = 0.0;
    for (j, d) in derivs.iter().enumerate() {
        let t1 = d.dfh_dh * s.u_h[j];
        let t2: f64 = (0..k).map(|i| d.dfh_dw[i] * s.u_w[i][j]).sum();
        let t3 = d.dfh_dphi * s.u_phi[j];
        acc += t1 + t2 + t3;
        scale = scale.max(t1.abs()).max(t2.abs()).max(t3.abs());
    }
    let fbar_h2_direct = acc / n as f64;

    let mut fbar_w2 = Params::new();
    let mut fbar_w2_direct = Params::new();
    for a in 0..k {
        let fa = &s.f_w[a];
        let ua = &s.u_w[a];
        let dh = DH_REL_FBAR2 * s.h;
        // ω ∂/∂h ∫₀^T f_a u_h dt; a constant f_a makes the integral vanish identically
        let constant = fa.iter().all(|v| *v == fa[0]);
        let dterm = if constant {
            0.0
        } else {
            let eps = s.eps;
            let w = s.w.as_slice();
            let d1 = (int_fa_uh(chart, a, s.h + dh, w, n, eps)? - int_fa_uh(chart, a, s.h - dh, w, n, eps)?) / (2.0 * dh);
            let d2 = (int_fa_uh(chart, a, s.h + 0.5 * dh, w, n, eps)? - int_fa_uh(chart, a, s.h - 0.5 * dh, w, n, eps)?) / dh;
            s.omega * (4.0 * d2 - d1) / 3.0
        };
        let mut v = dterm / TAU;
        for i in 0..k {
            v -= inv_omega * s.domega_dw[i] * mean_prod(fa, &s.u_w[i]);
        }
        let mut acc = 0.0;
        for (j, d) in derivs.iter().enumerate() {
            let mut t = d.div * ua[j];
            for i in 0..k {
                t += d.dfw_dw[a][i] * s.u_w[i][j] - d.dfw_dw[i][i] * ua[j];
            }
            acc += t;
        }
        v += acc / n as f64;
        fbar_w2.push(v);

        let mut acc = 0.0;
        for (j, d) in derivs.iter().enumerate() {
            acc += d.dfw_dh[a] * s.u_h[j] + d.dfw_dphi[a] * s.u_phi[j];
            for i in 0..k {
                acc += d.dfw_dw[a][i] * s.u_w[i][j];
            }
        }
        fbar_w2_direct.push(acc / n as f64);
    }

    Ok(Fbar2 { fbar_h2, fbar_w2, fbar_h2_direct, fbar_w2_direct, h2_term_scale: scale })
}

/// Coefficients of the averaged system of order two at `(h, w)`.
#[derive(Debug, Clone, Serialize)]
pub struct AveragedCoefficients {
    pub h: f64,
    pub w: Params,
    pub n_phi: usize,
    pub omega: f64,
    pub period: f64,
    pub fbar_h1: f64,
    pub fbar_w1: Params,
    pub omega1: f64,
    pub fbar_h2: f64,
    pub fbar_w2: Params,
    /// `f̂_{h,2} = f̄⁰_{h,2} + ⟨f¹_h⟩`.
    pub fhat_h2: f64,
    pub fhat_w2: Params,
    /// `𝓘(h, w)` from the kernel: `2π u⁰_{h,1}(φ=0) + π T f̄⁰_{h,1}`.
    pub curly_i: f64,
    /// `u⁰_{h,1}(h, w, 0)`.
    pub u_h_at_zero: f64,
    /// Spectral resolution indicator of `f_h` on the grid.
    pub spectral_tail: f64,
}

pub fn hat_coefficients_with(chart: &Chart, h: f64, w: &[f64], n: usize) -> Result<AveragedCoefficients> {
    let s = KernelSample::with_phi(chart, h, w, n, 0.0)?;
    let f2 = fbar2_from_sample(chart, &s)?;
    let sys = chart.system();
    let k = w.len();
    let mut f1_h = 0.0;
    let mut f1_w = vec![0.0; k];
    for pt in &s.points {
        let f1 = sys.perturbation_eps1(pt.x.q, pt.x.p, &pt.x.z);
        f1_h += sys.grad_h(pt.x.q, pt.x.p, &pt.x.z).dot(&f1);
        for i in 0..k {
            f1_w[i] += f1.z[i];
        }
    }
    f1_h /= n as f64;
    let fhat_w2: Params = (0..k).map(|i| f2.fbar_w2[i] + f1_w[i] / n as f64).collect();
    let u0 = s.u_h[0];
    Ok(AveragedCoefficients {
        h,
        w: Params::from_slice(w),
        n_phi: n,
        omega: s.omega,
        period: s.period,
        fbar_h1: s.fbar_h1,
        fbar_w1: s.fbar_w1.clone(),
        omega1: s.omega1,
        fbar_h2: f2.fbar_h2,
        fbar_w2: f2.fbar_w2.clone(),
        fhat_h2: f2.fbar_h2 + f1_h,
        fhat_w2,
        curly_i: TAU * u0 + std::f64::consts::PI * s.period * s.fbar_h1,
        u_h_at_zero: u0,
        spectral_tail: spectral_tail(&s.f_h),
    })
}

pub fn hat_coefficients(chart: &Chart, h: f64, w: &[f64]) -> Result<AveragedCoefficients> {
    hat_coefficients_with(chart, h, w, DEFAULT_N_PHI)
}

/// `v̂₀ = v₀ − ε u⁰_{v,1}(v₀, φ₀)` componentwise.
pub fn shift_initial(chart: &Chart, h0: f64, w0: &[f64], phi0: f64, eps: f64) -> Result<(f64, Params)> {
    if eps == 0.0 {
        return Ok((h0, Params::from_slice(w0)));
    }
    let h = h0 - eps * u1(chart, Slow::H, h0, w0, phi0, 0.0)?;
    let mut w: Params = smallvec![];
    for i in 0..w0.len() {
        w.push(w0[i] - eps * u1(chart, Slow::W(i), h0, w0, phi0, 0.0)?);
    }
    if !(h > 0.0) {
        return Err(Error::OutsideChart { h });
    }
    Ok((h, w))
}

/// Separatrix limit of `u⁰_{h,1}` at `s = φ/2π`. As `h → 0` the orbit spends
/// all but a bounded time near the saddle, meets loop 2 at `s = 1/4` and loop 1
/// at `s = 3/4`, so `u` becomes the zero-mean sawtooth with slope `Θ₃` and
/// drops `Θ₂`, `Θ₁` there. Finite `h` approaches it at rate `O(1/ln(1/h))`.
pub fn u_h_limit(theta1: f64, theta2: f64, s: f64) -> f64 {
    let theta3 = theta1 + theta2;
    let s = s.rem_euclid(1.0);
    let g = s * theta3 - if s >= 0.75 { theta3 } else if s >= 0.25 { theta2 } else { 0.0 };
    g - (0.25 * theta3 - 0.5 * theta2)
}

/// `sup_φ |u_h_limit|`, attained at the jumps.
pub fn u_h_limit_max(theta1: f64, theta2: f64) -> f64 {
    let theta3 = theta1 + theta2;
    let m = 0.25 * theta3 - 0.5 * theta2;
    [0.25 * theta3, 0.25 * theta3 - theta2, 0.75 * theta3 - theta2, -0.25 * theta3, 0.0]
        .iter()
        .fold(0.0f64, |acc, v| acc.max((v - m).abs()))
}

/// `u⁰_{v,1}` at an arbitrary phase, from the spectral kernel by trigonometric
/// interpolation; cheaper than [`u1`] when the grid is already available.
pub fn interpolate_periodic(values: &[f64], phi: f64) -> f64 {
    let n = values.len();
    let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft(&mut buf, false);
    let mut acc = buf[0].re;
    for (j, c) in buf.iter().enumerate().skip(1) {
        let k = wavenumber(j, n);
        if n % 2 == 0 && j == n / 2 {
            acc += c.re * (k * phi).cos();
            continue;
        }
        acc += (c * Complex64::from_polar(1.0, k * phi)).re;
    }
    acc / n as f64
}
