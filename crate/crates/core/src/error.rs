use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("incompatible homotopy endpoints: {0}")]
    IncompatibleEndpoints(String),
    #[error("argument outside the kernel triangle: x={x}, y={y}")]
    OutOfTriangle { x: f64, y: f64 },
    #[error("non-integrable kernel: {0}")]
    NonIntegrable(String),
    #[error("unknown cross-section `{0}`")]
    UnknownCrossSection(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("channel rejected: {0}")]
    ChannelRejected(String),
    #[error("did not converge: {0}")]
    NoConvergence(String),
    #[error("integrality check failed: sum of terms {0} is not an integer")]
    NotIntegral(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
