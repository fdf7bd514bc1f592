//! Adaptive explicit Runge-Kutta integration (Dormand-Prince 8(5,3)) with
//! 7th-order dense output.
//!
//! The integrator is deliberately callback-driven: after every accepted step the
//! caller's observer sees the step, may request its dense interpolant, and may
//! stop the integration at any time inside the step. Event location for
//! transversal crossings and level sets is built on top of that in the callers.

mod tableau;

use tableau::{A, B, C, D, E3, E5, N_STAGES, N_STAGES_EXTENDED};
use thiserror::Error;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;
const INTERPOLATOR_POWER: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t}")]
    StepSizeTooSmall { t: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerances {
    pub const fn new(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol }
    }
}

/// Driver configuration.
#[derive(Debug, Clone, Copy)]
pub struct Dop853 {
    pub tol: Tolerances,
    pub max_step: f64,
    pub first_step: Option<f64>,
    pub max_steps: usize,
    /// Only the leading components enter the error estimate when set.
    pub error_dims: Option<usize>,
}

impl Dop853 {
    pub fn new(tol: Tolerances) -> Self {
        Self {
            tol,
            max_step: f64::INFINITY,
            first_step: None,
            max_steps: 5_000_000,
            error_dims: None,
        }
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    /// Restricts step-size control to the first `dims` components, e.g. to
    /// let variational equations ride along with the base solution.
    pub fn with_error_dims(mut self, dims: usize) -> Self {
        self.error_dims = Some(dims);
        self
    }
}

/// What the observer wants after seeing a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    Continue,
    /// Stop the integration at the given time inside the last step.
    StopAt(f64),
}

/// Final state of an integration.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub t: f64,
    pub y: Vec<f64>,
    pub steps: usize,
    pub rhs_evals: usize,
    /// `true` when an observer requested the stop.
    pub stopped: bool,
}

/// Polynomial interpolant over one accepted step.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t_old: f64,
    pub t_new: f64,
    y_old: Vec<f64>,
    // INTERPOLATOR_POWER rows of length n, row-major.
    coeffs: Vec<f64>,
}

impl DenseSegment {
    pub fn dim(&self) -> usize {
        self.y_old.len()
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let n = self.y_old.len();
        let h = self.t_new - self.t_old;
        let x = if h == 0.0 { 0.0 } else { (t - self.t_old) / h };
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for k in (0..INTERPOLATOR_POWER).rev() {
                acc += self.coeffs[k * n + i];
                // reversed(F) alternates multiplication by x and (1 - x)
                if (INTERPOLATOR_POWER - 1 - k) % 2 == 0 {
                    acc *= x;
                } else {
                    acc *= 1.0 - x;
                }
            }
            *o = acc + self.y_old[i];
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.y_old.len()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = if self.t_old <= self.t_new {
            (self.t_old, self.t_new)
        } else {
            (self.t_new, self.t_old)
        };
        t >= a && t <= b
    }
}

/// View of an accepted step handed to observers.
pub struct AcceptedStep<'a, F> {
    pub t_old: f64,
    pub t_new: f64,
    pub y_old: &'a [f64],
    pub y_new: &'a [f64],
    pub f_new: &'a [f64],
    k: &'a mut [Vec<f64>],
    rhs: &'a mut F,
    dense: Option<DenseSegment>,
    extra_evals: usize,
}

impl<'a, F> AcceptedStep<'a, F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    /// Builds (once) and returns the dense interpolant for this step.
    pub fn dense(&mut self) -> &DenseSegment {
        if self.dense.is_none() {
            let n = self.y_old.len();
            let h = self.t_new - self.t_old;
            let mut ytmp = vec![0.0; n];
            for s in (N_STAGES + 1)..N_STAGES_EXTENDED {
                for i in 0..n {
                    let mut dy = 0.0;
                    for (j, kj) in self.k.iter().enumerate().take(s) {
                        let a = A[s][j];
                        if a != 0.0 {
                            dy += a * kj[i];
                        }
                    }
                    ytmp[i] = self.y_old[i] + h * dy;
                }
                let (_, tail) = self.k.split_at_mut(s);
                (self.rhs)(self.t_old + C[s] * h, &ytmp, &mut tail[0]);
                self.extra_evals += 1;
            }
            let mut coeffs = vec![0.0; INTERPOLATOR_POWER * n];
            for i in 0..n {
                let f_old = self.k[0][i];
                let dy = self.y_new[i] - self.y_old[i];
                coeffs[i] = dy;
                coeffs[n + i] = h * f_old - dy;
                coeffs[2 * n + i] = 2.0 * dy - h * (self.f_new[i] + f_old);
                for (r, drow) in D.iter().enumerate() {
                    let mut acc = 0.0;
                    for (j, kj) in self.k.iter().enumerate() {
                        if drow[j] != 0.0 {
                            acc += drow[j] * kj[i];
                        }
                    }
                    coeffs[(3 + r) * n + i] = h * acc;
                }
            }
            self.dense = Some(DenseSegment {
                t_old: self.t_old,
                t_new: self.t_new,
                y_old: self.y_old.to_vec(),
                coeffs,
            });
        }
        self.dense.as_ref().expect("dense output just built")
    }

    /// Owned copy of the interpolant.
    pub fn take_dense(&mut self) -> DenseSegment {
        self.dense();
        self.dense.clone().expect("dense output just built")
    }
}

fn rms_norm(v: &[f64], scale: &[f64]) -> f64 {
    let n = v.len().max(1) as f64;
    (v.iter().zip(scale).map(|(a, s)| (a / s) * (a / s)).sum::<f64>() / n).sqrt()
}

impl Dop853 {
    fn initial_step<F>(&self, rhs: &mut F, t0: f64, y0: &[f64], f0: &[f64], span: f64, dir: f64) -> f64
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y0.len();
        let scale: Vec<f64> = y0.iter().map(|y| self.tol.atol + y.abs() * self.tol.rtol).collect();
        let d0 = rms_norm(y0, &scale);
        let d1 = rms_norm(f0, &scale);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        let y1: Vec<f64> = (0..n).map(|i| y0[i] + h0 * dir * f0[i]).collect();
        let mut f1 = vec![0.0; n];
        rhs(t0 + h0 * dir, &y1, &mut f1);
        let diff: Vec<f64> = (0..n).map(|i| f1[i] - f0[i]).collect();
        let d2 = rms_norm(&diff, &scale) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        (100.0 * h0).min(h1).min(span).min(self.max_step)
    }

    /// Integrates `y' = rhs(t, y)` from `t0` towards `t_end` (either direction).
    ///
    /// The observer is invoked after every accepted step and may stop the run
    /// at any time within that step; the returned state is then the dense
    /// interpolant evaluated there.
    pub fn integrate<F, O>(&self, mut rhs: F, t0: f64, y0: &[f64], t_end: f64, mut observer: O) -> Result<Outcome, OdeError>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
        O: FnMut(&mut AcceptedStep<'_, F>) -> Control,
    {
        let n = y0.len();
        let dir = if t_end >= t0 { 1.0 } else { -1.0 };
        let span = (t_end - t0).abs();
        let mut t = t0;
        let mut y = y0.to_vec();
        if span == 0.0 {
            return Ok(Outcome { t, y, steps: 0, rhs_evals: 0, stopped: false });
        }
        let mut f = vec![0.0; n];
        rhs(t, &y, &mut f);
        let mut evals = 1usize;
        let mut h_abs = match self.first_step {
            Some(h) => h.min(span),
            None => {
                evals += 1;
                self.initial_step(&mut rhs, t, &y, &f, span, dir)
            }
        };

        let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; N_STAGES_EXTENDED];
        let mut y_new = vec![0.0; n];
        let mut f_new = vec![0.0; n];
        let mut ytmp = vec![0.0; n];
        let mut scale = vec![0.0; n];
        let mut steps = 0usize;

        while dir * (t_end - t) > 0.0 {
            if steps >= self.max_steps {
                return Err(OdeError::MaxStepsExceeded { t, max_steps: self.max_steps });
            }
            let min_step = 10.0 * (next_toward(t, dir) - t).abs();
            h_abs = h_abs.min(self.max_step).max(min_step);
            let mut rejected = false;
            let t_new = loop {
                if h_abs < min_step {
                    return Err(OdeError::StepSizeTooSmall { t });
                }
                let mut h = h_abs * dir;
                let mut t_new = t + h;
                if dir * (t_new - t_end) > 0.0 {
                    t_new = t_end;
                }
                h = t_new - t;
                h_abs = h.abs();

                k[0].copy_from_slice(&f);
                for s in 1..N_STAGES {
                    for i in 0..n {
                        let mut dy = 0.0;
                        for (j, kj) in k.iter().enumerate().take(s) {
                            let a = A[s][j];
                            if a != 0.0 {
                                dy += a * kj[i];
                            }
                        }
                        ytmp[i] = y[i] + h * dy;
                    }
                    let (_, tail) = k.split_at_mut(s);
                    rhs(t + C[s] * h, &ytmp, &mut tail[0]);
                }
                for i in 0..n {
                    let mut acc = 0.0;
                    for (j, kj) in k.iter().enumerate().take(N_STAGES) {
                        acc += B[j] * kj[i];
                    }
                    y_new[i] = y[i] + h * acc;
                }
                rhs(t_new, &y_new, &mut f_new);
                k[N_STAGES].copy_from_slice(&f_new);
                evals += N_STAGES;

                if y_new.iter().any(|v| !v.is_finite()) {
                    h_abs *= MIN_FACTOR;
                    rejected = true;
                    if h_abs < min_step {
                        return Err(OdeError::NonFinite { t });
                    }
                    continue;
                }

                for i in 0..n {
                    scale[i] = self.tol.atol + y[i].abs().max(y_new[i].abs()) * self.tol.rtol;
                }
                let mut e5 = 0.0;
                let mut e3 = 0.0;
                let n_err = self.error_dims.map_or(n, |d| d.min(n));
                for i in 0..n_err {
                    let mut a5 = 0.0;
                    let mut a3 = 0.0;
                    for (j, kj) in k.iter().enumerate().take(N_STAGES + 1) {
                        a5 += E5[j] * kj[i];
                        a3 += E3[j] * kj[i];
                    }
                    e5 += (a5 / scale[i]).powi(2);
                    e3 += (a3 / scale[i]).powi(2);
                }
                let err = if e5 == 0.0 && e3 == 0.0 {
                    0.0
                } else {
                    h_abs * e5 / ((e5 + 0.01 * e3) * n_err as f64).sqrt()
                };

                if err < 1.0 {
                    let mut factor = if err == 0.0 {
                        MAX_FACTOR
                    } else {
                        MAX_FACTOR.min(SAFETY * err.powf(ERROR_EXPONENT))
                    };
                    if rejected {
                        factor = factor.min(1.0);
                    }
                    h_abs *= factor;
                    break t_new;
                } else {
                    h_abs *= MIN_FACTOR.max(SAFETY * err.powf(ERROR_EXPONENT));
                    rejected = true;
                }
            };
            steps += 1;

            let mut step = AcceptedStep {
                t_old: t,
                t_new,
                y_old: &y,
                y_new: &y_new,
                f_new: &f_new,
                k: &mut k,
                rhs: &mut rhs,
                dense: None,
                extra_evals: 0,
            };
            let control = observer(&mut step);
            evals += step.extra_evals;
            if let Control::StopAt(ts) = control {
                let y_stop = if ts == t_new {
                    y_new.clone()
                } else {
                    step.dense().eval(ts)
                };
                return Ok(Outcome { t: ts, y: y_stop, steps, rhs_evals: evals, stopped: true });
            }
            t = t_new;
            y.copy_from_slice(&y_new);
            f.copy_from_slice(&f_new);
        }
        Ok(Outcome { t, y, steps, rhs_evals: evals, stopped: false })
    }

    /// Convenience: integrate to `t_end` without observing steps.
    pub fn solve<F>(&self, rhs: F, t0: f64, y0: &[f64], t_end: f64) -> Result<Outcome, OdeError>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        self.integrate(rhs, t0, y0, t_end, |_| Control::Continue)
    }
}

fn next_toward(t: f64, dir: f64) -> f64 {
    // nextafter without libm
    if t == 0.0 {
        return dir * f64::from_bits(1);
    }
    let bits = t.to_bits();
    let up = (t > 0.0) == (dir > 0.0);
    f64::from_bits(if up { bits + 1 } else { bits - 1 })
}

/// Sequence of dense segments covering an interval, with lookup by time.
#[derive(Debug, Clone, Default)]
pub struct DenseTrajectory {
    segments: Vec<DenseSegment>,
}

impl DenseTrajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, seg: DenseSegment) {
        self.segments.push(seg);
    }

    pub fn segments(&self) -> &[DenseSegment] {
        &self.segments
    }

    pub fn t_start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.t_old)
    }

    pub fn t_end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_new)
    }

    /// Evaluates at `t`, clamping to the covered range. Segments must be in
    /// increasing time order.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        let idx = match self
            .segments
            .binary_search_by(|s| s.t_new.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i,
            Err(i) => i.min(self.segments.len() - 1),
        };
        self.segments[idx].eval_into(t, out);
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.segments[0].dim()];
        self.eval_into(t, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_accuracy() {
        let solver = Dop853::new(Tolerances::new(1e-12, 1e-14));
        let out = solver
            .solve(|_t, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            }, 0.0, &[1.0, 0.0], 20.0)
            .unwrap();
        assert!((out.y[0] - 20f64.cos()).abs() < 1e-10);
        assert!((out.y[1] + 20f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn backward_integration() {
        let solver = Dop853::new(Tolerances::new(1e-12, 1e-14));
        let out = solver.solve(|_t, y, dy| dy[0] = y[0], 1.0, &[1f64.exp()], 0.0).unwrap();
        assert!((out.y[0] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn dense_output_matches_exact_solution() {
        let solver = Dop853::new(Tolerances::new(1e-11, 1e-13));
        let mut traj = DenseTrajectory::new();
        solver
            .integrate(
                |_t, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                },
                0.0,
                &[0.0, 1.0],
                10.0,
                |step| {
                    traj.push(step.take_dense());
                    Control::Continue
                },
            )
            .unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..=1000 {
            let t = i as f64 * 0.01;
            let y = traj.eval(t);
            worst = worst.max((y[0] - t.sin()).abs()).max((y[1] - t.cos()).abs());
        }
        assert!(worst < 1e-9, "dense error {worst}");
    }

    #[test]
    fn observer_stop_interpolates() {
        let solver = Dop853::new(Tolerances::new(1e-12, 1e-14));
        let out = solver
            .integrate(|_t, _y, dy| dy[0] = 1.0, 0.0, &[0.0], 10.0, |step| {
                if step.t_new >= 2.5 {
                    Control::StopAt(2.5)
                } else {
                    Control::Continue
                }
            })
            .unwrap();
        assert!(out.stopped);
        assert!((out.y[0] - 2.5).abs() < 1e-12);
    }
}
