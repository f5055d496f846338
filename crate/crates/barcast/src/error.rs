//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid heightfield: {0}")]
    InvalidField(String),

    #[error("invalid view: {0}")]
    InvalidView(String),

    #[error("invalid ray: {0}")]
    InvalidRay(String),

    #[error("invalid heaviside spec: {0}")]
    InvalidHeaviside(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("barrier violation: height {height} at bar ({row},{col}) outside ({h_min},{h_max})")]
    BarrierViolation {
        row: usize,
        col: usize,
        height: f64,
        h_min: f64,
        h_max: f64,
    },

    #[error("non-finite gradient at view {view}, pixel ({px},{py}), strip {strip}")]
    NonFiniteGradient {
        view: usize,
        px: usize,
        py: usize,
        strip: usize,
    },

    #[error("invalid optimizer config: {0}")]
    InvalidOptimizerConfig(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("run directory is locked (another run in progress?): {0}")]
    RunLocked(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad user input (config/usage) rather than a
    /// runtime failure. The CLI maps these to exit code 2, the rest to 3.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidView(_)
                | Error::InvalidField(_)
                | Error::InvalidHeaviside(_)
                | Error::InvalidOptimizerConfig(_)
        )
    }
}
