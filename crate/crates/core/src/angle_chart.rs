//! Energy-angle chart `(h, w, φ)` of the outer domain.
//!
//! `φ = 0` is the outer bisector ray from the saddle; `φ = 2π t / T` where `t`
//! is the unperturbed time since the last crossing of that ray. Every orbit is
//! integrated together with its tangent equations, so the position
//! derivatives `∂X/∂h`, `∂X/∂w` at fixed `φ` and the period derivatives come
//! out of the same integration instead of nested differencing.

use std::f64::consts::TAU;
use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;
use serde::Serialize;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::numerics::{brent, integrate_adaptive, wrap_angle};
use crate::ode::{Control, DenseTrajectory, Dop853, Tolerances};
use crate::system_model::{find_saddle, Params, PhasePoint, SaddleData, SystemDef};

#[derive(Debug, Clone, Copy)]
pub struct ChartConfig {
    pub h_floor: f64,
    pub h_max: f64,
    pub tol: Tolerances,
    pub cache_capacity: usize,
    /// Relative step in `h` for `chart_partials`.
    pub dh_rel: f64,
    /// Absolute step in `w` for `chart_partials`.
    pub dw: f64,
    /// Tolerated `|H − h|` along an orbit, relative to `max(1, h)`.
    pub energy_tol: f64,
}

impl Default for ChartConfig {
    fn default() -> Self {
        Self {
            h_floor: 1e-6,
            h_max: 10.0,
            tol: Tolerances::new(1e-12, 1e-14),
            cache_capacity: 4096,
            dh_rel: 1e-4,
            dw: 1e-5,
            energy_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnglePoint {
    pub h: f64,
    pub w: Params,
    pub phi: f64,
}

impl AnglePoint {
    pub fn new(h: f64, w: &[f64], phi: f64) -> Self {
        Self { h, w: Params::from_slice(w), phi: wrap_angle(phi) }
    }
}

/// One period of an unperturbed outer orbit with tangent data.
///
/// The dense state is `[q, p, Yh_q, Yh_p, Yw1_q, Yw1_p, …]` where `Yh`, `Yw_i`
/// are derivatives of the time-`t` flow image of the transversal point with
/// respect to `h` and `w_i`.
#[derive(Debug, Clone)]
pub struct OrbitSample {
    pub h: f64,
    pub w: Params,
    pub period: f64,
    pub omega: f64,
    /// `∂T/∂h` and `∂T/∂w_i` from the tangent equations.
    pub dt_dh: f64,
    pub dt_dw: Params,
    pub start: PhasePoint,
    pub max_energy_error: f64,
    traj: DenseTrajectory,
}

/// Chart data at one phase of an orbit.
#[derive(Debug, Clone)]
pub struct OrbitPoint {
    pub phi: f64,
    pub t: f64,
    pub x: PhasePoint,
    /// Unperturbed velocity `(q', p')`.
    pub flow: (f64, f64),
    /// `∂X/∂h` at fixed `(w, φ)`.
    pub x_h: (f64, f64),
    /// `∂X/∂w_i` at fixed `(h, φ)`.
    pub x_w: SmallVec<[(f64, f64); 2]>,
}

impl OrbitSample {
    pub fn nodes(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.traj.segments().len() + 1);
        let mut buf = vec![0.0; 2 + 2 * (1 + self.w.len())];
        for seg in self.traj.segments() {
            seg.eval_into(seg.t_old, &mut buf);
            out.push((seg.t_old, buf[0], buf[1]));
        }
        let t_end = self.period;
        self.traj.eval_into(t_end, &mut buf);
        out.push((t_end, buf[0], buf[1]));
        out
    }

    /// `∫₀^T g(t, q(t), p(t)) dt` by Gauss-Kronrod on each dense-output step.
    pub fn integrate_over_period<G: FnMut(f64, f64, f64) -> f64>(&self, g: G) -> f64 {
        self.integrate_time_range(0.0, self.period, g)
    }

    /// `∫_a^b g(t, q(t), p(t)) dt` for `0 ≤ a ≤ b ≤ T`.
    pub fn integrate_time_range<G: FnMut(f64, f64, f64) -> f64>(&self, a: f64, b: f64, mut g: G) -> f64 {
        let mut buf = vec![0.0; 2 + 2 * (1 + self.w.len())];
        let b = b.min(self.period);
        let mut total = 0.0;
        for seg in self.traj.segments() {
            let t0 = seg.t_old.max(a);
            let t1 = seg.t_new.min(b);
            if t0 >= t1 {
                continue;
            }
            let (v, _) = integrate_adaptive(
                |t| {
                    seg.eval_into(t, &mut buf);
                    g(t, buf[0], buf[1])
                },
                t0,
                t1,
                &[],
                1e-15,
                1e-13,
            );
            total += v;
        }
        total
    }

    /// Position at time `t` (reduced modulo the period).
    pub fn position_at_time(&self, t: f64) -> (f64, f64) {
        let t = t.rem_euclid(self.period);
        let mut buf = vec![0.0; 2 + 2 * (1 + self.w.len())];
        self.traj.eval_into(t, &mut buf);
        (buf[0], buf[1])
    }

    pub fn point_at_time(&self, sys: &SystemDef, t: f64) -> OrbitPoint {
        let k = self.w.len();
        let t = t.rem_euclid(self.period);
        let mut buf = vec![0.0; 2 + 2 * (1 + k)];
        self.traj.eval_into(t, &mut buf);
        let (q, p) = (buf[0], buf[1]);
        let flow = sys.hamiltonian_flow(q, p, &self.w);
        let s = t / self.period;
        let x_h = (buf[2] + flow.0 * s * self.dt_dh, buf[3] + flow.1 * s * self.dt_dh);
        let x_w = (0..k)
            .map(|i| {
                let dtw = self.dt_dw[i];
                (buf[4 + 2 * i] + flow.0 * s * dtw, buf[5 + 2 * i] + flow.1 * s * dtw)
            })
            .collect();
        OrbitPoint {
            phi: TAU * s,
            t,
            x: PhasePoint { q, p, z: self.w.clone() },
            flow,
            x_h,
            x_w,
        }
    }

    pub fn point_at_phase(&self, sys: &SystemDef, phi: f64) -> OrbitPoint {
        let phi = wrap_angle(phi);
        let mut pt = self.point_at_time(sys, phi * self.period / TAU);
        pt.phi = phi;
        pt
    }

    /// Points on the uniform grid `φ_j = 2π j / n`.
    pub fn grid(&self, sys: &SystemDef, n: usize) -> Vec<OrbitPoint> {
        (0..n).map(|j| self.point_at_phase(sys, TAU * j as f64 / n as f64)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartPartials {
    pub domega_dh: f64,
    pub domega_dw: Params,
    pub dt_dh: f64,
    pub dt_dw: Params,
    pub step_h: f64,
    pub step_w: f64,
}

/// Components of the perturbation in chart coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FComponents {
    pub f_h: f64,
    pub f_w: Params,
    pub f_phi: f64,
}

type OrbitKey = (u64, u64, SmallVec<[u64; 2]>);

/// Energy-angle chart of one system, with an internally synchronized orbit
/// cache. Results never depend on the cache state.
pub struct Chart {
    sys: SystemDef,
    cfg: ChartConfig,
    cache: Mutex<LruCache<OrbitKey, Arc<OrbitSample>>>,
    saddles: Mutex<Vec<(Params, SaddleData)>>,
}

impl std::fmt::Debug for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chart").field("sys", &self.sys).field("cfg", &self.cfg).finish()
    }
}

impl Chart {
    pub fn new(sys: SystemDef) -> Self {
        Self::with_config(sys, ChartConfig::default())
    }

    pub fn with_config(sys: SystemDef, cfg: ChartConfig) -> Self {
        let cap = NonZeroUsize::new(cfg.cache_capacity.max(1)).expect("nonzero");
        Self { sys, cfg, cache: Mutex::new(LruCache::new(cap)), saddles: Mutex::new(Vec::new()) }
    }

    pub fn system(&self) -> &SystemDef {
        &self.sys
    }

    pub fn config(&self) -> &ChartConfig {
        &self.cfg
    }

    pub fn saddle(&self, w: &[f64]) -> Result<SaddleData> {
        {
            let saddles = self.saddles.lock();
            if let Some((_, s)) = saddles.iter().find(|(k, _)| k.as_slice() == w) {
                return Ok(s.clone());
            }
        }
        let s = find_saddle(&self.sys, w)?;
        let mut saddles = self.saddles.lock();
        if saddles.len() > 64 {
            saddles.clear();
        }
        saddles.push((Params::from_slice(w), s.clone()));
        Ok(s)
    }

    /// Signed distance across the transversal line and distance along the
    /// outer bisector, both relative to the saddle.
    pub fn transversal_coords(saddle: &SaddleData, q: f64, p: f64) -> (f64, f64) {
        let dq = q - saddle.location.0;
        let dp = p - saddle.location.1;
        let n = saddle.transversal_normal;
        let b = saddle.bisector_dir_outer;
        (n.0 * dq + n.1 * dp, b.0 * dq + b.1 * dp)
    }

    /// Intersection of `H = h` with the outer bisector ray.
    pub fn transversal_point(&self, h: f64, w: &[f64]) -> Result<PhasePoint> {
        if !(h > 0.0) || h > self.cfg.h_max {
            return Err(Error::NoIntersection { h });
        }
        let s = self.saddle(w)?;
        let (s_star, _) = self.transversal_param(&s, h, w)?;
        let b = s.bisector_dir_outer;
        Ok(PhasePoint::new(s.location.0 + s_star * b.0, s.location.1 + s_star * b.1, w))
    }

    fn transversal_param(&self, s: &SaddleData, h: f64, w: &[f64]) -> Result<(f64, f64)> {
        let b = s.bisector_dir_outer;
        let c = s.location;
        let energy = |r: f64| self.sys.energy(c.0 + r * b.0, c.1 + r * b.1, w);
        let hess = self.sys.hessian_qp(c.0, c.1, w);
        let kappa = hess[0][0] * b.0 * b.0 + 2.0 * hess[0][1] * b.0 * b.1 + hess[1][1] * b.1 * b.1;
        let mut hi = (2.0 * h / kappa.max(1e-12)).sqrt() * 0.5;
        let mut lo = 0.0;
        let mut found = false;
        for _ in 0..200 {
            if energy(hi) >= h {
                found = true;
                break;
            }
            lo = hi;
            hi *= 1.25;
            if hi > 1e6 {
                break;
            }
        }
        if !found {
            return Err(Error::NoIntersection { h });
        }
        let r = brent(|r| energy(r) - h, lo, hi, 1e-16, 200).ok_or(Error::NoIntersection { h })?;
        // dr/dh = 1 / (∇H·b)
        let g = self.sys.grad_h(c.0 + r * b.0, c.1 + r * b.1, w);
        Ok((r, 1.0 / (g.q * b.0 + g.p * b.1)))
    }

    fn key(&self, h: f64, w: &[f64]) -> OrbitKey {
        (self.sys.key(), h.to_bits(), w.iter().map(|v| v.to_bits()).collect())
    }

    fn check_h(&self, h: f64) -> Result<()> {
        if !(h >= self.cfg.h_floor) || h > self.cfg.h_max {
            return Err(Error::OutsideChart { h });
        }
        Ok(())
    }

    pub fn orbit(&self, h: f64, w: &[f64]) -> Result<Arc<OrbitSample>> {
        self.check_h(h)?;
        let key = self.key(h, w);
        if let Some(o) = self.cache.lock().get(&key) {
            return Ok(o.clone());
        }
        let orbit = Arc::new(self.compute_orbit(h, w)?);
        self.cache.lock().put(key, orbit.clone());
        Ok(orbit)
    }

    fn compute_orbit(&self, h: f64, w: &[f64]) -> Result<OrbitSample> {
        let k = w.len();
        let s = self.saddle(w)?;
        let (r, dr_dh) = self.transversal_param(&s, h, w)?;
        let b = s.bisector_dir_outer;
        let x0 = (s.location.0 + r * b.0, s.location.1 + r * b.1);

        // derivatives of the start point in w by differencing the root solve
        let mut start_w: SmallVec<[(f64, f64); 2]> = SmallVec::new();
        for i in 0..k {
            let dw = 1e-6 * w[i].abs().max(1.0);
            let mut wp = Params::from_slice(w);
            let mut wm = Params::from_slice(w);
            wp[i] += dw;
            wm[i] -= dw;
            let xp = self.transversal_point(h, &wp)?;
            let xm = self.transversal_point(h, &wm)?;
            start_w.push(((xp.q - xm.q) / (2.0 * dw), (xp.p - xm.p) / (2.0 * dw)));
        }

        let dim = 2 + 2 * (1 + k);
        let mut y0 = vec![0.0; dim];
        y0[0] = x0.0;
        y0[1] = x0.1;
        y0[2] = dr_dh * b.0;
        y0[3] = dr_dh * b.1;
        for i in 0..k {
            y0[4 + 2 * i] = start_w[i].0;
            y0[5 + 2 * i] = start_w[i].1;
        }

        let sys = &self.sys;
        let wv = Params::from_slice(w);
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            let (q, p) = (y[0], y[1]);
            let g = sys.model().gradient(q, p, &wv);
            let hs = sys.hessian_qp(q, p, &wv);
            dy[0] = g.p;
            dy[1] = -g.q;
            // A = [[H_pq, H_pp], [-H_qq, -H_qp]]
            let (a00, a01, a10, a11) = (hs[1][0], hs[1][1], -hs[0][0], -hs[0][1]);
            dy[2] = a00 * y[2] + a01 * y[3];
            dy[3] = a10 * y[2] + a11 * y[3];
            if k > 0 {
                let mixed = sys.hessian_qp_z(q, p, &wv);
                for i in 0..k {
                    let (yq, yp) = (y[4 + 2 * i], y[5 + 2 * i]);
                    dy[4 + 2 * i] = a00 * yq + a01 * yp + mixed[i].1;
                    dy[5 + 2 * i] = a10 * yq + a11 * yp - mixed[i].0;
                }
            }
        };

        let t_max = 200.0 + 40.0 * (1.0 / h).ln().max(0.0) / s.lambda;
        let solver = Dop853::new(self.cfg.tol).with_max_step(1.0).with_error_dims(2);
        let mut traj = DenseTrajectory::new();
        let mut period = None;
        let mut max_err: f64 = 0.0;
        let mut event_err = None;
        let saddle = s.clone();
        let out = solver.integrate(rhs, 0.0, &y0, t_max, |step| {
            max_err = max_err.max((sys.energy(step.y_new[0], step.y_new[1], &wv) - h).abs());
            let seg = step.take_dense();
            let (g_old, _) = Self::transversal_coords(&saddle, step.y_old[0], step.y_old[1]);
            let (g_new, along_new) = Self::transversal_coords(&saddle, step.y_new[0], step.y_new[1]);
            let first = step.t_old == 0.0;
            traj.push(seg);
            if !first && g_old < 0.0 && g_new >= 0.0 && along_new > 0.0 {
                let seg = traj.segments().last().expect("pushed");
                let mut buf = vec![0.0; dim];
                let root = brent(
                    |t| {
                        seg.eval_into(t, &mut buf);
                        Self::transversal_coords(&saddle, buf[0], buf[1]).0
                    },
                    step.t_old,
                    step.t_new,
                    1e-14,
                    200,
                );
                match root {
                    Some(t) => {
                        period = Some(t);
                        return Control::StopAt(t);
                    }
                    None => {
                        event_err = Some(step.t_new);
                        return Control::StopAt(step.t_new);
                    }
                }
            }
            Control::Continue
        })?;
        if let Some(t) = event_err {
            return Err(Error::EventMissed { t });
        }
        let period = period.ok_or(Error::EventNotFound { h })?;
        let _ = out;
        if max_err > self.cfg.energy_tol * h.max(1.0) {
            return Err(Error::EnergyDrift { h, drift: max_err });
        }

        // Period derivatives: the return point stays on the transversal line.
        let mut yt = vec![0.0; dim];
        traj.eval_into(period, &mut yt);
        let flow = sys.hamiltonian_flow(yt[0], yt[1], w);
        let n = s.transversal_normal;
        let n_flow = n.0 * flow.0 + n.1 * flow.1;
        let dt_dh = -(n.0 * yt[2] + n.1 * yt[3]) / n_flow;
        let dt_dw = (0..k)
            .map(|i| {
                // the transversal line itself may move with w through the saddle
                let shift = {
                    let dq = start_w[i].0;
                    let dp = start_w[i].1;
                    n.0 * dq + n.1 * dp
                };
                -(n.0 * yt[4 + 2 * i] + n.1 * yt[5 + 2 * i] - shift) / n_flow
            })
            .collect();

        Ok(OrbitSample {
            h,
            w: Params::from_slice(w),
            period,
            omega: TAU / period,
            dt_dh,
            dt_dw,
            start: PhasePoint::new(x0.0, x0.1, w),
            max_energy_error: max_err,
            traj,
        })
    }

    /// `(h, w, φ)` of a point in the outer domain, by integrating the
    /// unperturbed flow backwards to the transversal.
    pub fn to_angle(&self, x: &PhasePoint) -> Result<AnglePoint> {
        let h = self.sys.energy_at(x);
        self.check_h(h)?;
        let w = x.z.clone();
        let orbit = self.orbit(h, &w)?;
        let s = self.saddle(&w)?;
        let (g0, along0) = Self::transversal_coords(&s, x.q, x.p);
        if g0 == 0.0 && along0 > 0.0 {
            return Ok(AnglePoint { h, w, phi: 0.0 });
        }
        let sys = &self.sys;
        let wv = w.clone();
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            let (dq, dp) = sys.hamiltonian_flow(y[0], y[1], &wv);
            dy[0] = dq;
            dy[1] = dp;
        };
        let solver = Dop853::new(self.cfg.tol).with_max_step(1.0);
        let mut hit = None;
        let mut missed = None;
        let t_end = -1.5 * orbit.period - 1.0;
        solver.integrate(rhs, 0.0, &[x.q, x.p], t_end, |step| {
            let (g_old, _) = Self::transversal_coords(&s, step.y_old[0], step.y_old[1]);
            let (g_new, along) = Self::transversal_coords(&s, step.y_new[0], step.y_new[1]);
            if g_old > 0.0 && g_new <= 0.0 && along > 0.0 {
                let seg = step.dense().clone();
                let mut buf = [0.0; 2];
                match brent(
                    |t| {
                        seg.eval_into(t, &mut buf);
                        Self::transversal_coords(&s, buf[0], buf[1]).0
                    },
                    step.t_new,
                    step.t_old,
                    1e-14,
                    200,
                ) {
                    Some(t) => {
                        hit = Some(-t);
                        return Control::StopAt(t);
                    }
                    None => {
                        missed = Some(step.t_new);
                        return Control::StopAt(step.t_new);
                    }
                }
            }
            Control::Continue
        })?;
        if let Some(t) = missed {
            return Err(Error::EventMissed { t });
        }
        let t_back = hit.ok_or(Error::EventNotFound { h })?;
        let phi = wrap_angle(TAU * t_back / orbit.period);
        Ok(AnglePoint { h, w, phi })
    }

    pub fn from_angle(&self, a: &AnglePoint) -> Result<PhasePoint> {
        let orbit = self.orbit(a.h, &a.w)?;
        Ok(orbit.point_at_phase(&self.sys, a.phi).x)
    }

    /// Chart components at an orbit point.
    pub fn f_components_at(&self, orbit: &OrbitSample, pt: &OrbitPoint, eps: f64) -> FComponents {
        let f = self.sys.perturbation(pt.x.q, pt.x.p, &pt.x.z, eps);
        f_components_from(&self.sys, orbit.omega, pt, &f)
    }

    pub fn f_components(&self, a: &AnglePoint, eps: f64) -> Result<FComponents> {
        let orbit = self.orbit(a.h, &a.w)?;
        let pt = orbit.point_at_phase(&self.sys, a.phi);
        Ok(self.f_components_at(&orbit, &pt, eps))
    }

    /// Central differences of `T` and `ω` in `h` (relative step `dh_rel`) and in
    /// each `w_i` (absolute step `dw`).
    pub fn chart_partials(&self, h: f64, w: &[f64]) -> Result<ChartPartials> {
        let dh = self.cfg.dh_rel * h;
        if h - dh < self.cfg.h_floor || dh <= h * f64::EPSILON * 16.0 {
            return Err(Error::StepUnderflow { h });
        }
        let tp = self.orbit(h + dh, w)?.period;
        let tm = self.orbit(h - dh, w)?.period;
        let dt_dh = (tp - tm) / (2.0 * dh);
        let domega_dh = (TAU / tp - TAU / tm) / (2.0 * dh);
        let mut dt_dw = Params::new();
        let mut domega_dw = Params::new();
        for i in 0..w.len() {
            let mut wp = Params::from_slice(w);
            let mut wm = Params::from_slice(w);
            wp[i] += self.cfg.dw;
            wm[i] -= self.cfg.dw;
            let tp = self.orbit(h, &wp)?.period;
            let tm = self.orbit(h, &wm)?.period;
            dt_dw.push((tp - tm) / (2.0 * self.cfg.dw));
            domega_dw.push((TAU / tp - TAU / tm) / (2.0 * self.cfg.dw));
        }
        Ok(ChartPartials { domega_dh, domega_dw, dt_dh, dt_dw, step_h: dh, step_w: self.cfg.dw })
    }

    /// `ω(h, w)`.
    pub fn omega(&self, h: f64, w: &[f64]) -> Result<f64> {
        Ok(self.orbit(h, w)?.omega)
    }

    pub fn period(&self, h: f64, w: &[f64]) -> Result<f64> {
        Ok(self.orbit(h, w)?.period)
    }

    /// Residual of `∂f_h/∂h + ∂f_φ/∂φ + Σ ∂f_{w_i}/∂w_i + (∂T/∂h f_h + Σ ∂T/∂w_i f_{w_i}) / T − Div f`
    /// at `a`, all partials by fourth-order central differences (relative step
    /// `step` in `h`, absolute `step` in `φ` and `w`). The `∂T/∂w` term is the
    /// volume factor `T/2π` of the chart; it vanishes when `f_w ≡ 0`.
    pub fn trace_residual(&self, a: &AnglePoint, eps: f64, step: f64) -> Result<f64> {
        let d4 = |v: [f64; 4], s: f64| (-v[3] + 8.0 * v[2] - 8.0 * v[1] + v[0]) / (12.0 * s);
        let offsets = [-2.0, -1.0, 1.0, 2.0];
        let dh = step * a.h;
        if a.h - 2.0 * dh < self.cfg.h_floor {
            return Err(Error::StepUnderflow { h: a.h });
        }
        let mut v = [0.0; 4];
        for (j, o) in offsets.iter().enumerate() {
            v[j] = self.f_components(&AnglePoint { h: a.h + o * dh, w: a.w.clone(), phi: a.phi }, eps)?.f_h;
        }
        let mut lhs = d4(v, dh);
        for (j, o) in offsets.iter().enumerate() {
            v[j] = self.f_components(&AnglePoint::new(a.h, &a.w, a.phi + o * step), eps)?.f_phi;
        }
        lhs += d4(v, step);
        for i in 0..a.w.len() {
            for (j, o) in offsets.iter().enumerate() {
                let mut w = a.w.clone();
                w[i] += o * step;
                v[j] = self.f_components(&AnglePoint { h: a.h, w, phi: a.phi }, eps)?.f_w[i];
            }
            lhs += d4(v, step);
        }
        let orbit = self.orbit(a.h, &a.w)?;
        let pt = orbit.point_at_phase(&self.sys, a.phi);
        let fc = self.f_components_at(&orbit, &pt, eps);
        lhs += orbit.dt_dh / orbit.period * fc.f_h;
        for (i, fw) in fc.f_w.iter().enumerate() {
            lhs += orbit.dt_dw[i] / orbit.period * fw;
        }
        Ok(lhs - self.sys.div_f(&pt.x, eps))
    }

    pub fn cache_len(&self) -> usize {
        self.cache.lock().len()
    }
}

/// `f_φ = −ω · (X_h × (f_qp − Σ f_{w_i} X_{w_i}))`, which follows from
/// `X_h f_h + X_w f_w + X_φ f_φ = f_qp` and `X_h × X_φ = −1/ω`.
pub fn f_components_from(sys: &SystemDef, omega: f64, pt: &OrbitPoint, f: &crate::system_model::Qpz) -> FComponents {
    let g = sys.grad_h(pt.x.q, pt.x.p, &pt.x.z);
    let f_h = g.dot(f);
    let mut vq = f.q;
    let mut vp = f.p;
    for (i, fw) in f.z.iter().enumerate() {
        vq -= fw * pt.x_w[i].0;
        vp -= fw * pt.x_w[i].1;
    }
    let cross = pt.x_h.0 * vp - pt.x_h.1 * vq;
    FComponents { f_h, f_w: f.z.clone(), f_phi: -omega * cross }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system_model::make_duffing_eight;

    #[test]
    fn transversal_point_on_p_axis() {
        let chart = Chart::new(make_duffing_eight(0.0, 1.0, 0.0));
        let x = chart.transversal_point(0.02, &[0.0]).unwrap();
        assert!(x.q.abs() < 1e-15 && (x.p - 0.2).abs() < 1e-14);
        let x = chart.transversal_point(0.5, &[0.0]).unwrap();
        assert!((x.p - 1.0).abs() < 1e-14);
        assert!(matches!(chart.transversal_point(50.0, &[0.0]), Err(Error::NoIntersection { .. })));
    }

    #[test]
    fn orbit_closes_and_conserves_energy() {
        let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
        let o = chart.orbit(0.1, &[0.1]).unwrap();
        assert!((o.period * o.omega - TAU).abs() < 1e-14);
        assert!(o.max_energy_error < 1e-10);
        let (q, p) = o.position_at_time(o.period);
        assert!((q - o.start.q).abs() < 1e-9 && (p - o.start.p).abs() < 1e-9);
    }

    #[test]
    fn tangent_period_derivatives_match_differences() {
        let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
        for &h in &[0.5, 0.05] {
            let o = chart.orbit(h, &[0.1]).unwrap();
            let cp = chart.chart_partials(h, &[0.1]).unwrap();
            assert!((o.dt_dh - cp.dt_dh).abs() < 1e-6 * cp.dt_dh.abs(), "{} vs {}", o.dt_dh, cp.dt_dh);
            assert!((o.dt_dw[0] - cp.dt_dw[0]).abs() < 1e-5 * cp.dt_dw[0].abs().max(1.0));
        }
    }

    #[test]
    fn position_derivatives_match_differences() {
        let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
        let sys = chart.system().clone();
        let (h, w) = (0.2, 0.1);
        let o = chart.orbit(h, &[w]).unwrap();
        let dh = 1e-5;
        let op = chart.orbit(h + dh, &[w]).unwrap();
        let om = chart.orbit(h - dh, &[w]).unwrap();
        let dw = 1e-5;
        let wp = chart.orbit(h, &[w + dw]).unwrap();
        let wm = chart.orbit(h, &[w - dw]).unwrap();
        for j in 0..16 {
            let phi = TAU * (j as f64 + 0.3) / 16.0;
            let pt = o.point_at_phase(&sys, phi);
            let a = op.point_at_phase(&sys, phi).x;
            let b = om.point_at_phase(&sys, phi).x;
            let fd = ((a.q - b.q) / (2.0 * dh), (a.p - b.p) / (2.0 * dh));
            let scale = pt.x_h.0.hypot(pt.x_h.1).max(1.0);
            assert!((fd.0 - pt.x_h.0).abs() < 1e-5 * scale && (fd.1 - pt.x_h.1).abs() < 1e-5 * scale);
            let a = wp.point_at_phase(&sys, phi).x;
            let b = wm.point_at_phase(&sys, phi).x;
            let fd = ((a.q - b.q) / (2.0 * dw), (a.p - b.p) / (2.0 * dw));
            let scale = pt.x_w[0].0.hypot(pt.x_w[0].1).max(1.0);
            assert!((fd.0 - pt.x_w[0].0).abs() < 1e-5 * scale && (fd.1 - pt.x_w[0].1).abs() < 1e-5 * scale);
            // H(X(h, w, φ), w) = h
            let g = sys.grad_h(pt.x.q, pt.x.p, &[w]);
            assert!((g.q * pt.x_h.0 + g.p * pt.x_h.1 - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn angle_round_trip() {
        let chart = Chart::new(make_duffing_eight(0.1, 1.0, 0.0));
        for &(h, phi) in &[(0.3, 0.0), (0.3, 1.0), (0.05, 3.5), (0.01, 6.0)] {
            let a = AnglePoint::new(h, &[0.1], phi);
            let x = chart.from_angle(&a).unwrap();
            let b = chart.to_angle(&x).unwrap();
            assert!((b.h - h).abs() < 1e-10);
            let d = (b.phi - a.phi).abs();
            assert!(d.min(TAU - d) < 1e-8, "phi {} vs {}", b.phi, a.phi);
        }
    }

    #[test]
    fn outside_chart_rejected() {
        let chart = Chart::new(make_duffing_eight(0.0, 1.0, 0.0));
        let inside = PhasePoint::new(1.0, 0.0, &[0.0]);
        assert!(matches!(chart.to_angle(&inside), Err(Error::OutsideChart { .. })));
    }
}
