use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The operation needs structure the objective does not expose
    /// (e.g. explicit kernel blocks of a network objective).
    #[error("capability: {0}")]
    Capability(String),

    #[error("size cap exceeded: {what} = {size} > {cap}")]
    CapExceeded { what: String, size: usize, cap: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("perturbation norm stayed above kappa after {attempts} draws (last norm {last_norm})")]
    ResampleCap { attempts: usize, last_norm: f64 },

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
