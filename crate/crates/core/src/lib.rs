//! Structured controller parameter tuning for linear(ized) dynamical
//! systems: frequency-sampled H-infinity minimization with trust-region
//! convexification and stability safeguards, plus power-system model
//! construction (power flow, droop inverters, controller block diagrams)
//! and time-domain verification.

pub mod blocks;
pub mod error;
pub mod fixtures;
pub mod gridmodel;
pub mod lti;
pub mod param;
pub mod sim;
pub mod subproblem;
pub mod tuner;

pub use error::{Error, Result};
