//! Phase-space decoherence of high-frequency waves in two mismatched random media.
//!
//! Two wave fields propagating in media that differ by a weak random mismatch
//! stay correlated only up to a random phase. At the Liouville level the
//! two-field correlation is carried along random characteristics
//! `(X(t), K(t), Z(t))`: position, momentum, and accumulated phase difference.
//! As the medium correlation length `delta` shrinks, the momentum performs a
//! diffusion on the sphere `|k| = const` and the phase becomes a Brownian
//! motion, with transport coefficients given by line integrals of the medium
//! correlation tensor.
//!
//! This crate provides the full pipeline:
//!
//! * [`corr`] — correlation tensor families with analytic derivatives,
//! * [`field`] — gridless Gaussian random field synthesis,
//! * [`coeffs`] — transport coefficients by adaptive quadrature,
//! * [`delta`] — the scaled characteristic dynamics at finite `delta`,
//! * [`limit`] — the limiting diffusion and its reduced sphere PDE,
//! * [`stats`] / [`config`] — ensemble statistics and run configuration.

pub mod config;
pub mod coeffs;
pub mod corr;
pub mod delta;
pub mod error;
pub mod field;
pub mod limit;
pub mod quad;
pub mod seeding;
pub mod stats;

pub use coeffs::TransportCoefficients;
pub use corr::{Component, CorrelationModel, KernelFamily};
pub use error::{Error, Result};
