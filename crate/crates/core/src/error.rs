use thiserror::Error;

/// Errors produced by the sketching and estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sketch contains no photons")]
    EmptySketch,

    #[error("frequency index {0} is not part of the sketch")]
    MissingFrequency(usize),

    #[error("phase is undefined: |z| = {0:e} at the fundamental frequency")]
    UndefinedPhase(f64),

    #[error("objective evaluated to a non-finite value")]
    NonFiniteLoss,

    #[error("model probability vanishes at bin {0} while its derivative does not")]
    SingularModel(usize),

    #[error("Fisher information matrix is singular; parameters are not identifiable")]
    NonIdentifiable,

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
