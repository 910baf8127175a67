use num_complex::Complex64;
use thiserror::Error;

/// Errors raised by the numerical pipeline.
///
/// Variants are grouped by [`ErrorClass`] so drivers can map them to exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("time {t} lies outside the sampled window [{start}, {end}]")]
    Domain { t: f64, start: f64, end: f64 },

    #[error("Newton iteration did not converge; residual history {history:?}")]
    NoConvergence { history: Vec<f64> },

    #[error("degenerate periodic orbit: I - M is singular (smallest singular value {sigma_min:e})")]
    DegenerateOrbit { sigma_min: f64 },

    #[error("unstable in the linear approximation; multipliers {multipliers:?}")]
    Instability { multipliers: Vec<Complex64> },

    #[error("degenerate monodromy: {0}")]
    Degeneracy(String),

    #[error("resonance in mode {k}: |exp(i Omega T) - 1| = {distance:e}")]
    Resonance { k: usize, distance: f64 },

    #[error("caustic: det C = {det_abs:e} at t = {t}")]
    Caustic { t: f64, det_abs: f64 },

    #[error("focal point: det lambda_3 = {det_abs:e} for dt = {dt}")]
    FocalPoint { dt: f64, det_abs: f64 },

    #[error("undersampled phase: jump of {jump} rad at sample {index}")]
    Undersampled { index: usize, jump: f64 },

    #[error("uncertainty relation violated: smallest eigenvalue {margin:e}")]
    Uncertainty { margin: f64 },

    #[error("grid resolution: {0}")]
    Resolution(String),

    #[error("wavefunction not decayed at grid edge: relative edge amplitude {edge:e}")]
    Truncation { edge: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("norm drift {drift:e} exceeds bound")]
    NormDrift { drift: f64 },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(String),
}

/// Coarse classification used by the command-line driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Config,
    Numerical,
    Contract,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Contract(_) | Error::Domain { .. } | Error::DegenerateInput(_) => {
                ErrorClass::Contract
            }
            Error::Io(_) | Error::Serde(_) => ErrorClass::Io,
            _ => ErrorClass::Numerical,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
