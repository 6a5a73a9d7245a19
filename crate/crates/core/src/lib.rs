//! Simulation and analysis of resonance fluorescence from a driven
//! two-level emitter with environmental broadening.
//!
//! * [`spectral`]: unit conventions, lineshape kernels, map convolution.
//! * [`tls`]: optical Bloch steady state, Mollow spectrum, g2(tau).
//! * [`fluo_map`]: fluorescence maps, envelopes, PLE spectra.
//! * [`kmc`]: kinetic Monte Carlo of quantum-dot charge dynamics.
//! * [`fit`]: Levenberg-Marquardt engine and the PLE / g2 / narrowing models.
//! * [`cli`]: configuration, scenarios and file formats of the `resofluo` tool.

pub mod cli;
pub mod error;
pub mod faddeeva;
pub mod fit;
pub mod fluo_map;
pub mod kmc;
mod ode;
pub mod spectral;
pub mod tls;

pub use error::{Error, Result};
