//! Separatrix loops `l₁`, `l₂` and the per-turn energy loss rates
//! `Θ_i(w) = −∫_{l_i} f_h dt`.
//!
//! Loop 2 leaves the saddle along the unstable branch on the outer-bisector
//! side of the transversal normal, i.e. it is the loop followed during
//! `0 < φ < π`.

use serde::Serialize;

use crate::angle_chart::Chart;
use crate::error::{Error, Result};
use crate::numerics::brent;
use crate::ode::{Control, DenseTrajectory, Dop853, Tolerances};
use crate::system_model::{Params, PhasePoint, SaddleData, SystemDef};

pub const DEFAULT_DELTA_SAD: f64 = 1e-7;

/// Polygon vertices per integrator step; keeps chord error near 1e-5.
const POLYGON_SUBSTEPS: usize = 32;

#[derive(Debug, Clone, Serialize)]
pub struct LoopTrace {
    /// 1 or 2.
    pub index: usize,
    /// `(t, q, p)` from saddle exit to saddle entry.
    pub samples: Vec<(f64, f64, f64)>,
    pub duration: f64,
    /// `−∫ f_h dt` over the truncated loop.
    pub theta: f64,
    /// Bound on the part of the integral cut off within `δ_sad` of the saddle.
    pub tail_estimate: f64,
    pub max_energy_error: f64,
    #[serde(skip)]
    traj: DenseTrajectory,
    #[serde(skip)]
    saddle_location: (f64, f64),
}

impl LoopTrace {
    /// Point of the loop farthest from the saddle, located on the dense output.
    pub fn farthest_point(&self) -> (f64, f64) {
        let c = self.saddle_location;
        let mut buf = [0.0; 3];
        let mut best = (0.0, self.samples[0].1, self.samples[0].2);
        for seg in self.traj.segments() {
            let t1 = seg.t_new.min(self.duration);
            if seg.t_old >= t1 {
                continue;
            }
            let mut r2 = |t: f64| {
                seg.eval_into(t, &mut buf);
                ((buf[0] - c.0).powi(2) + (buf[1] - c.1).powi(2), buf[0], buf[1])
            };
            // golden-section on the squared distance inside the step
            let (mut a, mut b) = (seg.t_old, t1);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..80 {
                let x1 = b - g * (b - a);
                let x2 = a + g * (b - a);
                if r2(x1).0 > r2(x2).0 {
                    b = x2;
                } else {
                    a = x1;
                }
            }
            let cand = r2(0.5 * (a + b));
            if cand.0 > best.0 {
                best = cand;
            }
        }
        (best.1, best.2)
    }

    /// Even-odd containment test against the closed loop polygon.
    pub fn contains(&self, q: f64, p: f64) -> bool {
        let pts = &self.samples;
        let mut inside = false;
        let n = pts.len();
        let mut j = n - 1;
        for i in 0..n {
            let (qi, pi) = (pts[i].1, pts[i].2);
            let (qj, pj) = (pts[j].1, pts[j].2);
            if (pi > p) != (pj > p) && q < (qj - qi) * (p - pi) / (pj - pi) + qi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    /// Distance from a point to the loop polygon.
    pub fn distance(&self, q: f64, p: f64) -> f64 {
        let pts = &self.samples;
        let mut best = f64::INFINITY;
        for w in pts.windows(2) {
            let (ax, ay) = (w[0].1, w[0].2);
            let (bx, by) = (w[1].1, w[1].2);
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let s = if len2 > 0.0 { (((q - ax) * dx + (p - ay) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let d = (q - ax - s * dx).hypot(p - ay - s * dy);
            best = best.min(d);
        }
        best
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeparatrixSet {
    pub w: Params,
    pub delta_sad: f64,
    pub saddle: SaddleData,
    /// `loops[0]` is `l₁`, `loops[1]` is `l₂`.
    pub loops: [LoopTrace; 2],
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl SeparatrixSet {
    pub fn thetas(&self) -> (f64, f64, f64) {
        (self.theta1, self.theta2, self.theta3)
    }
}

fn trace_branch(sys: &SystemDef, saddle: &SaddleData, w: &[f64], sign: f64, delta: f64, index: usize) -> Result<LoopTrace> {
    let c = saddle.location;
    let e = saddle.unstable_dir;
    let y0 = [c.0 + sign * delta * e.0, c.1 + sign * delta * e.1, 0.0];
    let wv = Params::from_slice(w);
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (dq, dp) = sys.hamiltonian_flow(y[0], y[1], &wv);
        dy[0] = dq;
        dy[1] = dp;
        dy[2] = sys.f_h(&PhasePoint { q: y[0], p: y[1], z: wv.clone() }, 0.0);
    };
    let dist = |q: f64, p: f64| (q - c.0).hypot(p - c.1);
    let t_max = 200.0 + 8.0 * (1.0 / delta).ln() / saddle.lambda;
    let solver = Dop853::new(Tolerances::new(1e-12, 1e-16)).with_max_step(0.5);
    let mut traj = DenseTrajectory::new();
    let mut left = false;
    let mut end = None;
    let mut max_err: f64 = 0.0;
    let out = solver.integrate(rhs, 0.0, &y0, t_max, |step| {
        traj.push(step.take_dense());
        max_err = max_err.max(sys.energy(step.y_new[0], step.y_new[1], &wv).abs());
        let d_new = dist(step.y_new[0], step.y_new[1]);
        if !left {
            if d_new > 100.0 * delta {
                left = true;
            }
            return Control::Continue;
        }
        // Stop at distance δ, or at the closest approach when integration
        // error makes the orbit pass the saddle slightly wide of it.
        let radial = |q: f64, p: f64| {
            let (dq, dp) = sys.hamiltonian_flow(q, p, &wv);
            (q - c.0) * dq + (p - c.1) * dp
        };
        let r_old = radial(step.y_old[0], step.y_old[1]);
        let r_new = radial(step.y_new[0], step.y_new[1]);
        let near = d_new < 1e-3;
        if d_new <= delta || (near && r_old < 0.0 && r_new >= 0.0) {
            let seg = traj.segments().last().expect("pushed");
            let mut buf = [0.0; 3];
            let t = if d_new <= delta {
                brent(
                    |t| {
                        seg.eval_into(t, &mut buf);
                        dist(buf[0], buf[1]) - delta
                    },
                    step.t_old,
                    step.t_new,
                    1e-13,
                    200,
                )
            } else {
                brent(
                    |t| {
                        seg.eval_into(t, &mut buf);
                        radial(buf[0], buf[1])
                    },
                    step.t_old,
                    step.t_new,
                    1e-13,
                    200,
                )
            }
            .unwrap_or(step.t_new);
            end = Some(t);
            return Control::StopAt(t);
        }
        Control::Continue
    })?;
    let duration = end.ok_or(Error::LoopNotClosed { index })?;
    let theta = -out.y[2];
    let mut samples = Vec::new();
    let mut buf = [0.0; 3];
    for seg in traj.segments() {
        let t1 = seg.t_new.min(duration);
        if seg.t_old >= duration {
            break;
        }
        for k in 0..POLYGON_SUBSTEPS {
            let t = seg.t_old + (t1 - seg.t_old) * k as f64 / POLYGON_SUBSTEPS as f64;
            seg.eval_into(t, &mut buf);
            samples.push((t, buf[0], buf[1]));
        }
    }
    samples.push((duration, out.y[0], out.y[1]));
    let f_end = sys.f_h(&PhasePoint::new(out.y[0], out.y[1], w), 0.0).abs();
    let f_start = sys.f_h(&PhasePoint::new(y0[0], y0[1], w), 0.0).abs();
    Ok(LoopTrace {
        index,
        samples,
        duration,
        theta,
        tail_estimate: (f_end + f_start) / saddle.lambda,
        max_energy_error: max_err,
        traj,
        saddle_location: c,
    })
}

/// Traces both loops at parameter `w` and integrates `Θ₁`, `Θ₂` along them.
pub fn trace_loops(chart: &Chart, w: &[f64], delta_sad: f64) -> Result<SeparatrixSet> {
    let saddle = chart.saddle(w)?;
    let sys = chart.system();
    let l2 = trace_branch(sys, &saddle, w, 1.0, delta_sad, 2)?;
    let l1 = trace_branch(sys, &saddle, w, -1.0, delta_sad, 1)?;
    let theta1 = l1.theta;
    let theta2 = l2.theta;
    Ok(SeparatrixSet {
        w: Params::from_slice(w),
        delta_sad,
        saddle,
        loops: [l1, l2],
        theta1,
        theta2,
        theta3: theta1 + theta2,
    })
}

/// `(Θ₁, Θ₂, Θ₃)`; fails unless both loop rates are positive.
pub fn compute_theta(chart: &Chart, w: &[f64]) -> Result<(f64, f64, f64)> {
    let set = trace_loops(chart, w, DEFAULT_DELTA_SAD)?;
    check_theta(set.theta1, set.theta2)?;
    Ok(set.thetas())
}

pub fn check_theta(theta1: f64, theta2: f64) -> Result<()> {
    let tol = 1e-10;
    if !(theta1 > tol && theta2 > tol) {
        return Err(Error::NonPositiveTheta { theta1, theta2 });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaLimitEntry {
    pub h: f64,
    /// `−∮_{H=h} f_h dt`.
    pub value: f64,
    pub deviation: f64,
    pub h_log: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThetaLimitReport {
    pub theta3: f64,
    pub entries: Vec<ThetaLimitEntry>,
    pub deviation_decreasing: bool,
    pub ratio_bounded: bool,
    pub pass: bool,
}

pub const THETA_LIMIT_GRID: [f64; 4] = [0.1, 0.03, 0.01, 0.003];

/// `−∮ f_h dt` over the closed orbit `H = h`.
pub fn orbit_loss(chart: &Chart, h: f64, w: &[f64]) -> Result<f64> {
    let orbit = chart.orbit(h, w)?;
    let sys = chart.system();
    Ok(-orbit.integrate_over_period(|_t, q, p| sys.f_h(&PhasePoint::new(q, p, w), 0.0)))
}

/// Checks that `−∮ f_h dt` approaches `Θ₃` like `h ln(1/h)` on a fixed grid.
pub fn theta_limit_check(chart: &Chart, w: &[f64]) -> Result<ThetaLimitReport> {
    let set = trace_loops(chart, w, DEFAULT_DELTA_SAD)?;
    let mut entries = Vec::new();
    for &h in &THETA_LIMIT_GRID {
        let value = orbit_loss(chart, h, w)?;
        let deviation = (value - set.theta3).abs();
        let h_log = h * (1.0 / h).ln();
        entries.push(ThetaLimitEntry { h, value, deviation, h_log, ratio: deviation / h_log });
    }
    let deviation_decreasing = entries.windows(2).all(|e| e[1].deviation < e[0].deviation);
    let ratios: Vec<f64> = entries.iter().map(|e| e.ratio).collect();
    let rmax = ratios.iter().cloned().fold(0.0, f64::max);
    let rmin = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    // bounded: the ratio does not blow up towards the separatrix
    let ratio_bounded = rmax.is_finite() && ratios.last().copied().unwrap_or(0.0) <= 2.0 * rmax.max(rmin);
    Ok(ThetaLimitReport {
        theta3: set.theta3,
        deviation_decreasing,
        ratio_bounded,
        pass: deviation_decreasing && ratio_bounded,
        entries,
    })
}
