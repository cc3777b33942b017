//! Boltzmann sampling of fully connected spin glasses with pluggable
//! Metropolis-Hastings proposals, from classical single-spin-flip and
//! uniform moves to a masked autoregressive network trained on samples
//! drawn from a simulated QAOA circuit.
//!
//! The crate is organized along the sampling pipeline:
//!
//! * [`spinglass`] — instances, energies, exact Boltzmann quantities.
//! * [`qsim`] — statevector simulation, angle optimization, bitstring sampling.
//! * [`made`] — masked autoregressive density estimator (training, sampling).
//! * [`mcmc`] — Metropolis-Hastings kernel and chain execution.
//! * [`analysis`] — transition matrices, spectral gaps, magnetization
//!   estimators, autocorrelation.
//!
//! One bit convention is shared everywhere: bit `j` of a basis index is
//! spin `j`, and bit value `0` encodes spin `+1`.

pub mod analysis;
pub mod error;
pub mod made;
pub mod mcmc;
pub mod qsim;
pub mod seed;
pub mod spinglass;

pub use error::{Error, Result};
