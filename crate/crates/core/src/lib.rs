//! Steady states, metrology and readout for the two-photon driven dissipative Kerr resonator.

pub mod applications;
pub mod discrimination;
pub mod error;
pub mod fock;
pub mod gaussian;
pub mod liouvillian;
pub mod metrology;
pub mod numerics;
pub mod sweep;

pub use error::{Error, Result};
pub use fock::{DensityMatrix, SystemParams};
