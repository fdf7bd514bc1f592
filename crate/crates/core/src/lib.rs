//! Second-order averaging near separatrices of one-degree-of-freedom
//! Hamiltonian systems: energy-angle charts, averaged flows, pseudo-phase
//! prediction and a direct-integration oracle.

pub mod angle_chart;
pub mod averaged_flow;
pub mod averaging_kernel;
pub mod direct_sim;
pub mod error;
pub mod experiments;
pub mod numerics;
pub mod ode;
pub mod separatrix;
pub mod system_model;

pub use error::{Error, Result};
