use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no propagating first order: wavelength {wavelength:e} m is not below twice the spacing {spacing:e} m")]
    NoPropagatingOrder { wavelength: f64, spacing: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("accuracy check failed: {0}")]
    Accuracy(String),

    #[error("no signal: background-corrected spot intensities sum to {0}")]
    NoSignal(f64),

    #[error("detector geometry: {0}")]
    Geometry(String),

    #[error("analyzer period {period:e} m is below twice the grid step {step:e} m")]
    Undersampling { period: f64, step: f64 },

    #[error("fringe period {period:e} m is unreachable at wavelength {wavelength:e} m (needs period > wavelength/2)")]
    UnreachableFringePeriod { period: f64, wavelength: f64 },

    #[error("degenerate collinear geometry: {0}")]
    DegenerateGeometry(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{name} must be finite, got {value}")))
    }
}
