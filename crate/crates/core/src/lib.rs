//! Long-range antiferromagnetic Ising chains of trapped ions: coupling
//! synthesis from normal modes, the classical magnetization staircase,
//! transverse-field dynamics and readout emulation.

pub mod classical;
pub mod cli;
pub mod config;
pub mod couplings;
pub mod error;
pub mod measurement;
pub mod quantum;
pub mod spin;
pub mod trap;

pub use error::{Error, Result};
pub use spin::SpinConfiguration;
