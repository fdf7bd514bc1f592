//! Perturbed one-degree-of-freedom Hamiltonian systems.
//!
//! Coordinates are ordered `(q, p, z_1..z_k)` throughout. The unperturbed flow
//! is `q' = ∂H/∂p`, `p' = -∂H/∂q`, `z' = 0`; the perturbed system adds
//! `ε·(f_q, f_p, f_z)`.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::{smallvec, SmallVec};

use crate::error::{Error, Result};
use crate::numerics::{diff4, fd_step};

pub type Params = SmallVec<[f64; 2]>;

/// A vector or covector over `(q, p, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qpz {
    pub q: f64,
    pub p: f64,
    pub z: Params,
}

impl Qpz {
    pub fn zeros(k: usize) -> Self {
        Self { q: 0.0, p: 0.0, z: smallvec![0.0; k] }
    }

    pub fn dot(&self, other: &Qpz) -> f64 {
        self.q * other.q + self.p * other.p + self.z.iter().zip(&other.z).map(|(a, b)| a * b).sum::<f64>()
    }

    fn get(&self, i: usize) -> f64 {
        match i {
            0 => self.q,
            1 => self.p,
            _ => self.z[i - 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub q: f64,
    pub p: f64,
    pub z: Params,
}

impl PhasePoint {
    pub fn new(q: f64, p: f64, z: &[f64]) -> Self {
        Self { q, p, z: Params::from_slice(z) }
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.p.is_finite() && self.z.iter().all(|v| v.is_finite())
    }

    fn with_coord(&self, i: usize, v: f64) -> Self {
        let mut out = self.clone();
        match i {
            0 => out.q = v,
            1 => out.p = v,
            _ => out.z[i - 2] = v,
        }
        out
    }

    fn coord(&self, i: usize) -> f64 {
        match i {
            0 => self.q,
            1 => self.p,
            _ => self.z[i - 2],
        }
    }
}

/// Square matrix over `(q, p, z)`, row-major; row `i` is the gradient of
/// component `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

/// A Hamiltonian with a perturbation field. Implementors supply at least the
/// energy, the field and a saddle guess; derivatives default to fourth-order
/// central differences with step `1e-5·max(1, |x|)`.
pub trait Model: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn param_dim(&self) -> usize;

    /// Numbers identifying this instance (hashed into cache keys).
    fn fingerprint(&self) -> Vec<f64>;

    /// Raw energy, before the saddle normalization.
    fn hamiltonian(&self, q: f64, p: f64, z: &[f64]) -> f64;

    fn perturbation(&self, q: f64, p: f64, z: &[f64], eps: f64) -> Qpz;

    fn saddle_guess(&self, z: &[f64]) -> (f64, f64);

    fn gradient(&self, q: f64, p: f64, z: &[f64]) -> Qpz {
        let x = PhasePoint::new(q, p, z);
        let n = 2 + z.len();
        let mut g = Qpz::zeros(z.len());
        for i in 0..n {
            let xi = x.coord(i);
            let d = diff4(
                |v| {
                    let y = x.with_coord(i, v);
                    self.hamiltonian(y.q, y.p, &y.z)
                },
                xi,
                fd_step(xi),
            );
            match i {
                0 => g.q = d,
                1 => g.p = d,
                _ => g.z[i - 2] = d,
            }
        }
        g
    }

    /// Hessian of `H` in `(q, p)`: `[[H_qq, H_qp], [H_pq, H_pp]]`.
    fn hessian_qp(&self, q: f64, p: f64, z: &[f64]) -> [[f64; 2]; 2] {
        // outer step of a nested difference: roundoff of the inner one dominates
        let hq = 1e-3 * q.abs().max(1.0);
        let hp = 1e-3 * p.abs().max(1.0);
        let h_qq = diff4(|v| self.gradient(v, p, z).q, q, hq);
        let h_pp = diff4(|v| self.gradient(q, v, z).p, p, hp);
        let h_qp = 0.5 * (diff4(|v| self.gradient(q, v, z).q, p, hp) + diff4(|v| self.gradient(v, p, z).p, q, hq));
        [[h_qq, h_qp], [h_qp, h_pp]]
    }

    /// Mixed derivatives `(∂²H/∂q∂z_i, ∂²H/∂p∂z_i)` for each parameter.
    fn hessian_qp_z(&self, q: f64, p: f64, z: &[f64]) -> SmallVec<[(f64, f64); 2]> {
        (0..z.len())
            .map(|i| {
                let zi = z[i];
                let mut zz: Params = Params::from_slice(z);
                let dq = diff4(
                    |v| {
                        zz[i] = v;
                        self.gradient(q, p, &zz).q
                    },
                    zi,
                    1e-3 * zi.abs().max(1.0),
                );
                let mut zz: Params = Params::from_slice(z);
                let dp = diff4(
                    |v| {
                        zz[i] = v;
                        self.gradient(q, p, &zz).p
                    },
                    zi,
                    1e-3 * zi.abs().max(1.0),
                );
                (dq, dp)
            })
            .collect()
    }

    /// `∂f/∂ε` at `ε = 0`.
    fn perturbation_eps1(&self, q: f64, p: f64, z: &[f64]) -> Qpz {
        let step = 1e-4;
        let a = self.perturbation(q, p, z, step);
        let b = self.perturbation(q, p, z, -step);
        Qpz {
            q: (a.q - b.q) / (2.0 * step),
            p: (a.p - b.p) / (2.0 * step),
            z: a.z.iter().zip(&b.z).map(|(x, y)| (x - y) / (2.0 * step)).collect(),
        }
    }

    /// Jacobian of the perturbation field with respect to `(q, p, z)`.
    fn perturbation_jacobian(&self, q: f64, p: f64, z: &[f64], eps: f64) -> Jacobian {
        let x = PhasePoint::new(q, p, z);
        let n = 2 + z.len();
        let mut jac = Jacobian::zeros(n);
        for j in 0..n {
            let xj = x.coord(j);
            for i in 0..n {
                let d = diff4(
                    |v| {
                        let y = x.with_coord(j, v);
                        self.perturbation(y.q, y.p, &y.z, eps).get(i)
                    },
                    xj,
                    fd_step(xj),
                );
                jac.set(i, j, d);
            }
        }
        jac
    }

    /// Gradient of `f_h = f·∇H` with respect to `(q, p, z)`, for the raw `H`.
    /// `None` selects finite differences.
    fn fh_gradient(&self, _q: f64, _p: f64, _z: &[f64], _eps: f64) -> Option<Qpz> {
        None
    }

    /// Raw energy at the saddle and its z-gradient, when known in closed form.
    fn saddle_energy(&self, _z: &[f64]) -> Option<(f64, Params)> {
        None
    }
}

/// Figure-eight Duffing oscillator `H = p²/2 − q²/2 + z q³ + q⁴/4` with
/// perturbation `(0, −γ p, ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DuffingEight {
    pub z0: f64,
    pub gamma: f64,
    pub nu: f64,
}

impl Model for DuffingEight {
    fn name(&self) -> String {
        "duffing_eight".into()
    }

    fn param_dim(&self) -> usize {
        1
    }

    fn fingerprint(&self) -> Vec<f64> {
        vec![self.z0, self.gamma, self.nu]
    }

    fn hamiltonian(&self, q: f64, p: f64, z: &[f64]) -> f64 {
        let q2 = q * q;
        0.5 * p * p - 0.5 * q2 + z[0] * q2 * q + 0.25 * q2 * q2
    }

    fn gradient(&self, q: f64, p: f64, _z: &[f64]) -> Qpz {
        let z = _z[0];
        Qpz { q: -q + 3.0 * z * q * q + q * q * q, p, z: smallvec![q * q * q] }
    }

    fn hessian_qp(&self, q: f64, _p: f64, z: &[f64]) -> [[f64; 2]; 2] {
        [[-1.0 + 6.0 * z[0] * q + 3.0 * q * q, 0.0], [0.0, 1.0]]
    }

    fn hessian_qp_z(&self, q: f64, _p: f64, _z: &[f64]) -> SmallVec<[(f64, f64); 2]> {
        smallvec![(3.0 * q * q, 0.0)]
    }

    fn perturbation(&self, _q: f64, p: f64, _z: &[f64], _eps: f64) -> Qpz {
        Qpz { q: 0.0, p: -self.gamma * p, z: smallvec![self.nu] }
    }

    fn perturbation_eps1(&self, _q: f64, _p: f64, _z: &[f64]) -> Qpz {
        Qpz::zeros(1)
    }

    fn perturbation_jacobian(&self, _q: f64, _p: f64, _z: &[f64], _eps: f64) -> Jacobian {
        let mut j = Jacobian::zeros(3);
        j.set(1, 1, -self.gamma);
        j
    }

    fn fh_gradient(&self, q: f64, p: f64, _z: &[f64], _eps: f64) -> Option<Qpz> {
        Some(Qpz { q: 3.0 * self.nu * q * q, p: -2.0 * self.gamma * p, z: smallvec![0.0] })
    }

    fn saddle_guess(&self, _z: &[f64]) -> (f64, f64) {
        (0.0, 0.0)
    }

    fn saddle_energy(&self, _z: &[f64]) -> Option<(f64, Params)> {
        Some((0.0, smallvec![0.0]))
    }
}

/// A system ready for use by the chart and averaging code: the model plus the
/// normalization `H(C(z), z) = 0`.
#[derive(Clone)]
pub struct SystemDef {
    model: Arc<dyn Model>,
    key: u64,
}

impl fmt::Debug for SystemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemDef").field("model", &self.model).field("key", &self.key).finish()
    }
}

pub fn make_duffing_eight(z0: f64, gamma: f64, nu: f64) -> SystemDef {
    SystemDef::new(Arc::new(DuffingEight { z0, gamma, nu }))
}

impl SystemDef {
    pub fn new(model: Arc<dyn Model>) -> Self {
        let mut hasher = DefaultHasher::new();
        model.name().hash(&mut hasher);
        for v in model.fingerprint() {
            v.to_bits().hash(&mut hasher);
        }
        let key = hasher.finish();
        Self { model, key }
    }

    pub fn model(&self) -> &dyn Model {
        self.model.as_ref()
    }

    pub fn name(&self) -> String {
        self.model.name()
    }

    /// Cache key identifying the model instance.
    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn param_dim(&self) -> usize {
        self.model.param_dim()
    }

    /// Nominal parameter value `z0` used by experiments (first fingerprint entry
    /// for the built-ins, zero otherwise).
    pub fn default_w(&self) -> Params {
        let k = self.param_dim();
        let fp = self.model.fingerprint();
        if self.model.name() == "duffing_eight" {
            smallvec![fp[0]]
        } else {
            smallvec![0.0; k]
        }
    }

    fn offset(&self, z: &[f64]) -> (f64, Params) {
        if let Some(known) = self.model.saddle_energy(z) {
            return known;
        }
        match find_saddle_raw(self.model.as_ref(), z) {
            Ok((q, p)) => {
                let g = self.model.gradient(q, p, z);
                (self.model.hamiltonian(q, p, z), g.z)
            }
            Err(_) => (0.0, smallvec![0.0; z.len()]),
        }
    }

    /// Normalized energy, zero at the saddle.
    pub fn energy(&self, q: f64, p: f64, z: &[f64]) -> f64 {
        self.model.hamiltonian(q, p, z) - self.offset(z).0
    }

    pub fn energy_at(&self, x: &PhasePoint) -> f64 {
        self.energy(x.q, x.p, &x.z)
    }

    /// Gradient of the normalized energy.
    pub fn grad_h(&self, q: f64, p: f64, z: &[f64]) -> Qpz {
        let mut g = self.model.gradient(q, p, z);
        let (_, dz) = self.offset(z);
        for (gi, d) in g.z.iter_mut().zip(dz) {
            *gi -= d;
        }
        g
    }

    pub fn hessian_qp(&self, q: f64, p: f64, z: &[f64]) -> [[f64; 2]; 2] {
        self.model.hessian_qp(q, p, z)
    }

    pub fn hessian_qp_z(&self, q: f64, p: f64, z: &[f64]) -> SmallVec<[(f64, f64); 2]> {
        self.model.hessian_qp_z(q, p, z)
    }

    /// Unperturbed vector field `(q', p')`.
    pub fn hamiltonian_flow(&self, q: f64, p: f64, z: &[f64]) -> (f64, f64) {
        let g = self.model.gradient(q, p, z);
        (g.p, -g.q)
    }

    pub fn perturbation(&self, q: f64, p: f64, z: &[f64], eps: f64) -> Qpz {
        self.model.perturbation(q, p, z, eps)
    }

    pub fn perturbation_eps1(&self, q: f64, p: f64, z: &[f64]) -> Qpz {
        self.model.perturbation_eps1(q, p, z)
    }

    pub fn perturbation_jacobian(&self, q: f64, p: f64, z: &[f64], eps: f64) -> Jacobian {
        self.model.perturbation_jacobian(q, p, z, eps)
    }

    /// `f_q ∂H/∂q + f_p ∂H/∂p + f_z·∂H/∂z`.
    pub fn f_h(&self, x: &PhasePoint, eps: f64) -> f64 {
        let f = self.perturbation(x.q, x.p, &x.z, eps);
        self.grad_h(x.q, x.p, &x.z).dot(&f)
    }

    /// `f_h` computed from the `ε`-derivative field `f¹`.
    pub fn f1_h(&self, x: &PhasePoint) -> f64 {
        let f = self.perturbation_eps1(x.q, x.p, &x.z);
        self.grad_h(x.q, x.p, &x.z).dot(&f)
    }

    /// Gradient of `f_h` with respect to `(q, p, z)`.
    pub fn fh_gradient(&self, x: &PhasePoint, eps: f64) -> Qpz {
        let offset_free = self.model.saddle_energy(&x.z).is_some_and(|(_, dz)| dz.iter().all(|v| *v == 0.0));
        if offset_free {
            if let Some(g) = self.model.fh_gradient(x.q, x.p, &x.z, eps) {
                return g;
            }
        }
        let n = 2 + x.z.len();
        let mut g = Qpz::zeros(x.z.len());
        for i in 0..n {
            let xi = x.coord(i);
            let d = diff4(|v| self.f_h(&x.with_coord(i, v), eps), xi, 1e-3 * xi.abs().max(1.0));
            match i {
                0 => g.q = d,
                1 => g.p = d,
                _ => g.z[i - 2] = d,
            }
        }
        g
    }

    /// `∂f_q/∂q + ∂f_p/∂p + Σ ∂f_{z_i}/∂z_i`.
    pub fn div_f(&self, x: &PhasePoint, eps: f64) -> f64 {
        self.perturbation_jacobian(x.q, x.p, &x.z, eps).trace()
    }

    /// Right-hand side of the full perturbed system on `[q, p, z..]`.
    pub fn perturbed_rhs(&self, eps: f64, y: &[f64], dy: &mut [f64]) {
        let z = &y[2..];
        let g = self.model.gradient(y[0], y[1], z);
        if eps == 0.0 {
            dy[0] = g.p;
            dy[1] = -g.q;
            for d in &mut dy[2..] {
                *d = 0.0;
            }
            return;
        }
        let f = self.model.perturbation(y[0], y[1], z, eps);
        dy[0] = g.p + eps * f.q;
        dy[1] = -g.q + eps * f.p;
        for (d, fz) in dy[2..].iter_mut().zip(&f.z) {
            *d = eps * fz;
        }
    }
}

/// Saddle location and linear geometry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleData {
    /// `(q, p)`.
    pub location: (f64, f64),
    pub lambda: f64,
    /// Unit vectors in `(q, p)`.
    pub unstable_dir: (f64, f64),
    pub stable_dir: (f64, f64),
    /// Bisector between separatrix branches pointing into the outer domain.
    pub bisector_dir_outer: (f64, f64),
    /// Unit normal to the bisector, oriented along the unperturbed flow across it.
    pub transversal_normal: (f64, f64),
}

/// Gradient accepted once Newton steps stagnate.
const GRAD_NOISE_TOL: f64 = 1e-9;

fn find_saddle_raw(model: &dyn Model, z: &[f64]) -> Result<(f64, f64)> {
    let (mut q, mut p) = model.saddle_guess(z);
    for _ in 0..60 {
        let g = model.gradient(q, p, z);
        if g.q.abs().max(g.p.abs()) < 1e-13 {
            return Ok((q, p));
        }
        let h = model.hessian_qp(q, p, z);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if det == 0.0 || !det.is_finite() {
            return Err(Error::NoConvergence);
        }
        let dq = (h[1][1] * g.q - h[0][1] * g.p) / det;
        let dp = (-h[1][0] * g.q + h[0][0] * g.p) / det;
        q -= dq;
        p -= dp;
        if !(q.is_finite() && p.is_finite()) {
            return Err(Error::NoConvergence);
        }
        if dq.abs().max(dp.abs()) < 1e-10 {
            // stagnated: finite-difference gradients bottom out near 1e-11
            let g = model.gradient(q, p, z);
            if g.q.abs().max(g.p.abs()) < GRAD_NOISE_TOL {
                return Ok((q, p));
            }
        }
    }
    let g = model.gradient(q, p, z);
    if g.q.abs().max(g.p.abs()) < 1e-12 {
        Ok((q, p))
    } else {
        Err(Error::NoConvergence)
    }
}

fn unit(v: (f64, f64)) -> (f64, f64) {
    let n = v.0.hypot(v.1);
    (v.0 / n, v.1 / n)
}

/// Eigenvector of the linearization `[[H_pq, H_pp], [−H_qq, −H_qp]]` for
/// eigenvalue `mu`.
fn eigvec(hess: [[f64; 2]; 2], mu: f64) -> (f64, f64) {
    let (h_qq, h_qp, h_pp) = (hess[0][0], hess[0][1], hess[1][1]);
    let a = (h_pp, mu - h_qp);
    let b = (h_qp + mu, -h_qq);
    let na = a.0.hypot(a.1);
    let nb = b.0.hypot(b.1);
    if na >= nb {
        unit(a)
    } else {
        unit(b)
    }
}

pub fn find_saddle(sys: &SystemDef, z: &[f64]) -> Result<SaddleData> {
    let (q, p) = find_saddle_raw(sys.model(), z)?;
    let hess = sys.hessian_qp(q, p, z);
    let det = hess[0][0] * hess[1][1] - hess[0][1] * hess[1][0];
    if !(det < 0.0) {
        return Err(Error::DegenerateSaddle { det });
    }
    let lambda = (-det).sqrt();
    let e_u = eigvec(hess, lambda);
    let e_s = eigvec(hess, -lambda);
    let quad = |v: (f64, f64)| hess[0][0] * v.0 * v.0 + 2.0 * hess[0][1] * v.0 * v.1 + hess[1][1] * v.1 * v.1;
    let b1 = unit((e_u.0 + e_s.0, e_u.1 + e_s.1));
    let b2 = unit((e_u.0 - e_s.0, e_u.1 - e_s.1));
    let mut b = if quad(b1) > quad(b2) { b1 } else { b2 };
    if b.1 < 0.0 || (b.1 == 0.0 && b.0 < 0.0) {
        b = (-b.0, -b.1);
    }
    // The flow crosses the outer bisector towards the unstable branch that
    // leans on the same side as b.
    let mut e_u = e_u;
    if e_u.0 * b.0 + e_u.1 * b.1 < 0.0 {
        e_u = (-e_u.0, -e_u.1);
    }
    let mut normal = (b.1, -b.0);
    if normal.0 * e_u.0 + normal.1 * e_u.1 < 0.0 {
        normal = (-normal.0, -normal.1);
    }
    let mut e_s = e_s;
    if e_s.0 * b.0 + e_s.1 * b.1 < 0.0 {
        e_s = (-e_s.0, -e_s.1);
    }
    Ok(SaddleData {
        location: (q, p),
        lambda,
        unstable_dir: e_u,
        stable_dir: e_s,
        bisector_dir_outer: b,
        transversal_normal: normal,
    })
}

/// JSON system selection, e.g. `{"system":"duffing_eight","z0":0.1,"gamma":1.0,"nu":0.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub system: String,
    #[serde(default)]
    pub z0: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub nu: f64,
}

fn default_gamma() -> f64 {
    1.0
}

impl SystemConfig {
    pub fn build(&self) -> Result<SystemDef> {
        match self.system.as_str() {
            "duffing_eight" => {
                if !(self.gamma >= 0.0) || !self.z0.is_finite() || !self.nu.is_finite() {
                    return Err(Error::Config(format!(
                        "duffing_eight needs gamma >= 0 and finite z0, nu (got gamma = {})",
                        self.gamma
                    )));
                }
                Ok(make_duffing_eight(self.z0, self.gamma, self.nu))
            }
            other => Err(Error::Config(format!("unknown system '{other}'"))),
        }
    }
}
