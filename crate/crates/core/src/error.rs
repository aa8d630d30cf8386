use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate normalisation: largest log-weight is {max_log_weight}")]
    DegenerateNormalisation { max_log_weight: f64 },

    #[error("probing time must be positive, got {0}")]
    NonPositiveTime(f64),

    #[error("time step {dt:e} s exceeds the stability bound {bound:e} s")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("record length {len} does not match the requested grid ({expected} steps)")]
    RecordMismatch { len: usize, expected: usize },

    #[error("covariance of component ({n}, {n}) lost positive definiteness at step {step} (min eigenvalue {min_eigenvalue:e})")]
    LostPositivity {
        n: f64,
        step: usize,
        min_eigenvalue: f64,
    },

    #[error("symmetry preconditions violated: {0}")]
    SymmetryPrecondition(String),

    #[error("cavity field has not decayed: |ybar| = {ybar_norm:e}, |V - I| = {cov_dev:e}")]
    FieldNotDecayed { ybar_norm: f64, cov_dev: f64 },

    #[error("Fock cutoff saturated at step {step}: top-layer population {population:e}")]
    CutoffSaturated { step: usize, population: f64 },

    #[error("trace drift {drift:e} at step {step}")]
    TraceDrift { step: usize, drift: f64 },

    #[error("{0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
