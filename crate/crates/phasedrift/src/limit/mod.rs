//! The limiting diffusion of `(X, K, Z)` and its reduced sphere PDE.
//!
//! As the correlation length vanishes, the characteristic triple converges
//! in law to a diffusion whose generator carries momentum diffusion
//! tangent to the sphere `|k| = const`, phase diffusion, momentum-phase
//! cross diffusion, and first-order drifts. [`sde`] simulates that process
//! by Euler-Maruyama with sphere projection; [`sphere`] solves the
//! axisymmetric Kolmogorov equation the process reduces to for isotropic
//! media, giving a deterministic cross-check for the Monte Carlo.

pub mod sde;
pub mod sphere;

pub use sde::{
    estimate_limit_observable, run_limit_ensemble, step_limit_sde, CoeffProvider,
    IsotropicCoeffs, LimitEnsembleParams, LimitState,
};
pub use sphere::{solve_sphere_kolmogorov, SphereSolution};
