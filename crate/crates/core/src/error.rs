use std::path::PathBuf;

/// Errors produced across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point ({x:.3}, {y:.3}, {z:.3}) µm lies outside the field grid")]
    OutOfGrid { x: f64, y: f64, z: f64 },

    #[error("x = {x:.3} µm lies outside the trap axial extent [{min:.3}, {max:.3}]")]
    OutOfRange { x: f64, min: f64, max: f64 },

    #[error("solver did not converge for {what}: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { what: String, residual: f64, iterations: usize },

    #[error("no axial confinement: {0}")]
    NoConfinement(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("no net cooling: W = {rate:.4e} 1/s is not positive")]
    NoCooling { rate: f64 },

    #[error("sideband ratio {ratio:.4} >= 1 has no thermometric solution")]
    NoThermometricSolution { ratio: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("unidentifiable spectrum: {0}")]
    Spectrum(String),

    #[error("invalid sequence: {0}")]
    Sequence(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("field cache {path}: {message}")]
    Cache { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
