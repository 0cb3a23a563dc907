use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared across the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("spectral matrix not positive semidefinite at xi = {xi:?} (min eigenvalue {min_eig:.3e})")]
    SpectrumNotPsd { xi: [f64; 3], min_eig: f64 },

    #[error("|k| = {knorm:.3e} below the singular-point threshold k_min = {k_min:.3e}")]
    MomentumTooSmall { knorm: f64, k_min: f64 },

    #[error("quadrature did not converge within the evaluation budget ({evals} evaluations, error estimate {err:.3e} > tolerance {tol:.3e})")]
    QuadratureBudget { evals: usize, err: f64, tol: f64 },

    #[error("dt = {dt:.3e} violates the fast-scale resolution bound {bound:.3e} (c*delta/|k0|)")]
    TimeStepTooLarge { dt: f64, bound: f64 },

    #[error("dt = {dt:.3e} exceeds the explicit-scheme stability bound {bound:.3e}")]
    UnstableTimeStep { dt: f64, bound: f64 },

    #[error("second-order coefficient block has eigenvalue {min_eig:.3e} < -1e-9; coefficients inconsistent")]
    IndefiniteDiffusion { min_eig: f64 },

    #[error("path {index} failed: {source}")]
    PathFailed {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} paths failed (> 1% tolerated); first failure: {first}")]
    EnsembleAborted {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("standard error {se:.3e} exceeds requested tolerance {tol:.3e} at the path budget")]
    SeTolerance { se: f64, tol: f64 },

    #[error("path not sampled at stopping-time mesh resolution: sample spacing {spacing:.3e} > 1/N1 = {required:.3e}")]
    PathTooCoarse { spacing: f64, required: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code for the CLI: 2 config, 3 numerics.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidModel(_) => 2,
            _ => 3,
        }
    }
}
