use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("subsystem index {index} out of range for {count} subsystems")]
    SubsystemOutOfRange { index: usize, count: usize },

    #[error("operation requires {expected} topology, got {found}")]
    WrongTopology { expected: &'static str, found: String },

    #[error("superoperator needs ~{required} bytes, over the {budget} byte budget")]
    MemoryBudget { required: u64, budget: u64 },

    #[error("not a density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("integration produced non-finite values at t={time} with dt={dt}; reduce the step size")]
    NonFinite { time: f64, dt: f64 },

    #[error("trace drifted by {drift:e} over a renormalization chunk (dt={dt})")]
    TraceDrift { drift: f64, dt: f64 },

    #[error("steady-state solve failed: {0}")]
    SteadyState(String),

    #[error("phase-space field normalization {norm:.4} deviates from 1 by more than {tol}: {hint}")]
    Normalization { norm: f64, tol: f64, hint: &'static str },

    #[error("negative diffusion coefficient nu_{index} = {value} at state {state:?}")]
    NegativeDiffusion { index: usize, value: f64, state: [f64; 4] },

    #[error("stochastic trajectory diverged at step {step} (|X| = {norm:e})")]
    Diverged { step: usize, norm: f64 },

    #[error("mean field became non-finite at oscillator {index}")]
    MeanFieldNonFinite { index: usize },

    #[error("coherent state |alpha|={amplitude} loses {deficit:e} of its norm at n_max={n_max}")]
    CoherentTruncation { amplitude: f64, n_max: usize, deficit: f64 },

    #[error("not enough samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
