//! Quantum van der Pol oscillators with Kerr nonlinearity: Fock-space
//! operators, Lindblad dynamics and steady states, phase-space diagnostics,
//! entanglement, the semiclassical limit and nonlocally coupled rings.

pub mod chimera;
pub mod entanglement;
pub mod error;
pub mod fock;
pub mod linalg;
pub mod lindblad;
pub mod operator;
pub mod phasespace;
pub mod scan;
pub mod semiclassical;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
