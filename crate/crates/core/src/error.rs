use thiserror::Error;

use crate::ode::OdeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("saddle search did not converge")]
    NoConvergence,
    #[error("saddle is degenerate (Hessian determinant {det})")]
    DegenerateSaddle { det: f64 },
    #[error("energy level h = {h} has no intersection with the transversal")]
    NoIntersection { h: f64 },
    #[error("orbit at h = {h} did not return to the transversal")]
    EventNotFound { h: f64 },
    #[error("energy drift {drift:e} along the orbit at h = {h}")]
    EnergyDrift { h: f64, drift: f64 },
    #[error("point outside the outer chart domain (H = {h})")]
    OutsideChart { h: f64 },
    #[error("finite-difference step underflow at h = {h}")]
    StepUnderflow { h: f64 },
    #[error("separatrix loop {index} did not close")]
    LoopNotClosed { index: usize },
    #[error("non-positive Theta (Theta1 = {theta1}, Theta2 = {theta2})")]
    NonPositiveTheta { theta1: f64, theta2: f64 },
    #[error("averaged energy is not decreasing at h = {h} (rate {rate})")]
    ThetaSignError { h: f64, rate: f64 },
    #[error("cutoff {h_cut} is not below the starting energy {h0}")]
    CutoffTooLarge { h_cut: f64, h0: f64 },
    #[error("integration failed: {0}")]
    StepFailure(#[from] OdeError),
    #[error("event bracketing lost near t = {t}")]
    EventMissed { t: f64 },
    #[error("no transversal crossing with h > 0 before the separatrix crossing")]
    NoCrossing,
    #[error("trajectory did not reach the separatrix within t = {t_max}")]
    NoSeparatrixCrossing { t_max: f64 },
    #[error("capture ambiguous: point within {distance:e} of the separatrix")]
    AmbiguousCapture { distance: f64 },
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
