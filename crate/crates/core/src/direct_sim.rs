//! Direct integration of the perturbed system: transversal crossings, the
//! separatrix crossing, the measured pseudo-phase and capture classification.

use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::angle_chart::Chart;
use crate::error::{Error, Result};
use crate::numerics::{brent, frac};
use crate::ode::{Control, Dop853, Tolerances};
use crate::separatrix::{check_theta, trace_loops, SeparatrixSet, DEFAULT_DELTA_SAD};
use crate::system_model::{Params, PhasePoint, SaddleData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub rtol: f64,
    pub atol: f64,
    /// Guard band `h₋₁ < c₁ ε^{3/2}`.
    pub c1: f64,
    pub event_tol: f64,
    /// Hard limit on the fast time.
    pub t_max: f64,
    /// Extra time allowed after the separatrix crossing to settle the capture.
    pub t_settle: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-12, c1: 1.0, event_tol: 1e-12, t_max: 1e7, t_settle: 2e3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    G1,
    G2,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Crossing {
    pub t: f64,
    pub h: f64,
    pub w: Params,
    /// `+1` for the orientation of the unperturbed flow.
    pub direction: i8,
    /// Smallest energy seen at step ends before this crossing.
    pub h_min_before: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CrossingLog {
    pub crossings: Vec<Crossing>,
    /// Time of the first `H = 0` crossing, if any.
    pub t_separatrix: Option<f64>,
}

impl CrossingLog {
    /// Crossings before the separatrix crossing, latest first: `h₋₁, h₋₂, …`.
    pub fn pre_crossing(&self) -> Vec<&Crossing> {
        let t_sep = self.t_separatrix.unwrap_or(f64::INFINITY);
        self.crossings.iter().rev().filter(|c| c.t < t_sep).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Run through the separatrix crossing and settle the capture domain.
    Capture,
    /// Stop at the first transversal crossing at or after the given time.
    CrossingAfter(f64),
    /// Stop at a fixed time.
    Time(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct SimRun {
    pub eps: f64,
    pub log: CrossingLog,
    pub t_final: f64,
    pub final_point: PhasePoint,
    pub domain: Option<Domain>,
    /// `(t, q, p, z…, H)` at accepted steps, when recording was requested.
    pub path: Vec<Vec<f64>>,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaptureResult {
    pub domain: Domain,
    pub t_separatrix: f64,
    pub final_point: PhasePoint,
    pub measured_pseudo_phase: f64,
    pub h_minus_1: f64,
    /// The crossing energy actually used (differs from `h₋₁` in the guard band).
    pub h_used: f64,
    pub crossing_index_used: usize,
    pub theta3: f64,
    pub guard_band_applied: bool,
    pub n_crossings: usize,
}

fn key(w: &[f64]) -> Vec<u64> {
    w.iter().map(|v| v.to_bits()).collect()
}

/// Runs the perturbed system. Separatrix traces are cached per exact `w`.
pub struct Simulator<'a> {
    chart: &'a Chart,
    cfg: SimConfig,
    loops: Mutex<LruCache<Vec<u64>, Arc<SeparatrixSet>>>,
}

impl<'a> Simulator<'a> {
    pub fn new(chart: &'a Chart, cfg: SimConfig) -> Self {
        Self { chart, cfg, loops: Mutex::new(LruCache::new(NonZeroUsize::new(64).expect("nonzero"))) }
    }

    pub fn chart(&self) -> &Chart {
        self.chart
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn separatrix(&self, w: &[f64]) -> Result<Arc<SeparatrixSet>> {
        let k = key(w);
        if let Some(s) = self.loops.lock().get(&k) {
            return Ok(s.clone());
        }
        let s = Arc::new(trace_loops(self.chart, w, DEFAULT_DELTA_SAD)?);
        self.loops.lock().put(k, s.clone());
        Ok(s)
    }

    /// Classifies a point with `H < 0`; `None` while it is not inside exactly
    /// one loop polygon.
    fn locate(&self, set: &SeparatrixSet, q: f64, p: f64) -> Option<Domain> {
        let in1 = set.loops[0].contains(q, p);
        let in2 = set.loops[1].contains(q, p);
        match (in1, in2) {
            (true, false) => Some(Domain::G1),
            (false, true) => Some(Domain::G2),
            _ => None,
        }
    }

    pub fn integrate_perturbed(&self, x0: &PhasePoint, eps: f64, stop: StopRule, record: bool) -> Result<SimRun> {
        let sys = self.chart.system();
        let k = x0.z.len();
        let mut y0 = vec![x0.q, x0.p];
        y0.extend_from_slice(&x0.z);
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| sys.perturbed_rhs(eps, y, dy);
        let solver = Dop853::new(Tolerances::new(self.cfg.rtol, self.cfg.atol)).with_max_step(1.0).with_max_steps(50_000_000);
        let t_end = match stop {
            StopRule::Time(t) => t,
            _ => self.cfg.t_max,
        };

        let mut log = CrossingLog::default();
        let mut path = Vec::new();
        let mut h_min = sys.energy(x0.q, x0.p, &x0.z);
        let mut saddle: Option<(Params, SaddleData)> = None;
        let mut err: Option<Error> = None;
        // capture bookkeeping: (candidate domain, time of first sighting)
        let mut candidate: Option<(Domain, f64)> = None;
        let mut confirm_after = f64::INFINITY;
        let mut domain = None;
        let mut sep_set: Option<Arc<SeparatrixSet>> = None;
        let chart = self.chart;
        let event_tol = self.cfg.event_tol;
        let t_settle = self.cfg.t_settle;

        let mut saddle_for = |z: &[f64], err: &mut Option<Error>| -> Option<SaddleData> {
            if let Some((w, s)) = &saddle {
                if w.as_slice() == z {
                    return Some(s.clone());
                }
            }
            match chart.saddle(z) {
                Ok(s) => {
                    saddle = Some((Params::from_slice(z), s.clone()));
                    Some(s)
                }
                Err(e) => {
                    *err = Some(e);
                    None
                }
            }
        };

        let out = solver.integrate(rhs, 0.0, &y0, t_end, |step| {
            let (q, p) = (step.y_new[0], step.y_new[1]);
            let z_new = &step.y_new[2..];
            let e_new = sys.energy(q, p, z_new);
            if record {
                let mut row = Vec::with_capacity(4 + k);
                row.push(step.t_new);
                row.extend_from_slice(step.y_new);
                row.push(e_new);
                path.push(row);
            }

            // transversal crossing
            let Some(s) = saddle_for(z_new, &mut err) else {
                return Control::StopAt(step.t_new);
            };
            let (g_old, _) = Chart::transversal_coords(&s, step.y_old[0], step.y_old[1]);
            let (g_new, along) = Chart::transversal_coords(&s, q, p);
            if g_old < 0.0 && g_new >= 0.0 && along > 0.0 {
                let seg = step.dense().clone();
                let mut buf = vec![0.0; 2 + k];
                let tc = brent(
                    |t| {
                        seg.eval_into(t, &mut buf);
                        Chart::transversal_coords(&s, buf[0], buf[1]).0
                    },
                    step.t_old,
                    step.t_new,
                    event_tol,
                    200,
                );
                let Some(tc) = tc else {
                    err = Some(Error::EventMissed { t: step.t_new });
                    return Control::StopAt(step.t_new);
                };
                seg.eval_into(tc, &mut buf);
                let h = sys.energy(buf[0], buf[1], &buf[2..]);
                log.crossings.push(Crossing { t: tc, h, w: Params::from_slice(&buf[2..]), direction: 1, h_min_before: h_min });
                if let StopRule::CrossingAfter(t_min) = stop {
                    if tc >= t_min {
                        return Control::StopAt(tc);
                    }
                }
            }
            h_min = h_min.min(e_new);

            // separatrix crossing
            if log.t_separatrix.is_none() {
                let e_old = sys.energy(step.y_old[0], step.y_old[1], &step.y_old[2..]);
                if e_old > 0.0 && e_new <= 0.0 {
                    let seg = step.dense().clone();
                    let mut buf = vec![0.0; 2 + k];
                    let ts = brent(
                        |t| {
                            seg.eval_into(t, &mut buf);
                            sys.energy(buf[0], buf[1], &buf[2..])
                        },
                        step.t_old,
                        step.t_new,
                        event_tol,
                        200,
                    )
                    .unwrap_or(step.t_new);
                    log.t_separatrix = Some(ts);
                    if stop == StopRule::Capture {
                        match self.separatrix(z_new) {
                            Ok(set) => sep_set = Some(set),
                            Err(e) => {
                                err = Some(e);
                                return Control::StopAt(step.t_new);
                            }
                        }
                    }
                }
            }

            // capture classification
            if let (StopRule::Capture, Some(t_sep), Some(set)) = (stop, log.t_separatrix, sep_set.as_ref()) {
                if e_new < 0.0 {
                    let here = self.locate(set, q, p);
                    match (candidate, here) {
                        (None, Some(d)) => {
                            candidate = Some((d, step.t_new));
                            let lp = set.loops[if d == Domain::G1 { 0 } else { 1 }].duration;
                            confirm_after = step.t_new + lp;
                        }
                        (Some((d, _)), Some(d2)) if step.t_new >= confirm_after => {
                            if d == d2 {
                                domain = Some(d);
                            } else {
                                err = Some(Error::AmbiguousCapture { distance: set.loops[0].distance(q, p).min(set.loops[1].distance(q, p)) });
                            }
                            return Control::StopAt(step.t_new);
                        }
                        _ => {}
                    }
                }
                if step.t_new > t_sep + t_settle {
                    let d = set.loops[0].distance(q, p).min(set.loops[1].distance(q, p));
                    err = Some(Error::AmbiguousCapture { distance: d });
                    return Control::StopAt(step.t_new);
                }
            }
            Control::Continue
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        if stop == StopRule::Capture && domain.is_none() {
            return Err(Error::NoSeparatrixCrossing { t_max: out.t });
        }
        Ok(SimRun {
            eps,
            log,
            t_final: out.t,
            final_point: PhasePoint::new(out.y[0], out.y[1], &out.y[2..]),
            domain,
            path,
            steps: out.steps,
        })
    }

    /// Runs to capture and measures `h₋₁ / (ε Θ₃)`, applying the guard band.
    pub fn measure_pseudo_phase(&self, x0: &PhasePoint, eps: f64) -> Result<CaptureResult> {
        let run = self.integrate_perturbed(x0, eps, StopRule::Capture, false)?;
        self.capture_result(&run)
    }

    pub fn capture_result(&self, run: &SimRun) -> Result<CaptureResult> {
        let domain = run.domain.ok_or(Error::NoSeparatrixCrossing { t_max: run.t_final })?;
        let t_sep = run.log.t_separatrix.ok_or(Error::NoSeparatrixCrossing { t_max: run.t_final })?;
        let eps = run.eps;
        let pre = run.log.pre_crossing();
        let first = pre.first().ok_or(Error::NoCrossing)?;
        let guard = self.cfg.c1 * eps.powf(1.5);
        // first k with the energy above the guard band up to h₋ₖ
        let mut used = None;
        for (i, c) in pre.iter().enumerate() {
            if c.h >= guard && c.h_min_before > guard {
                used = Some((i, *c));
                break;
            }
        }
        let (idx, c) = used.ok_or(Error::NoCrossing)?;
        let set = self.separatrix(&c.w)?;
        check_theta(set.theta1, set.theta2)?;
        Ok(CaptureResult {
            domain,
            t_separatrix: t_sep,
            final_point: run.final_point.clone(),
            measured_pseudo_phase: frac(c.h / (eps * set.theta3)),
            h_minus_1: first.h,
            h_used: c.h,
            crossing_index_used: idx + 1,
            theta3: set.theta3,
            guard_band_applied: idx > 0,
            n_crossings: run.log.crossings.len(),
        })
    }

    /// Capture domain only.
    pub fn classify_capture(&self, x0: &PhasePoint, eps: f64) -> Result<Domain> {
        let run = self.integrate_perturbed(x0, eps, StopRule::Capture, false)?;
        run.domain.ok_or(Error::NoSeparatrixCrossing { t_max: run.t_final })
    }

    /// Classifies a point already below the separatrix energy.
    pub fn classify_point(&self, x: &PhasePoint) -> Result<Domain> {
        let set = self.separatrix(&x.z)?;
        self.locate(&set, x.q, x.p).ok_or_else(|| Error::AmbiguousCapture {
            distance: set.loops[0].distance(x.q, x.p).min(set.loops[1].distance(x.q, x.p)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system_model::make_duffing_eight;

    #[test]
    fn deep_points_classify_by_side() {
        let chart = Chart::new(make_duffing_eight(0.0, 1.0, 0.0));
        let sim = Simulator::new(&chart, SimConfig::default());
        assert_eq!(sim.classify_point(&PhasePoint::new(-1.0, 0.0, &[0.0])).unwrap(), Domain::G1);
        assert_eq!(sim.classify_point(&PhasePoint::new(1.0, 0.0, &[0.0])).unwrap(), Domain::G2);
        assert!(matches!(sim.classify_point(&PhasePoint::new(0.0, 1.0, &[0.0])), Err(Error::AmbiguousCapture { .. })));
    }
}
