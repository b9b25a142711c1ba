use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("integration blew up at solver step {step} (|value| > {threshold:e})")]
    BlowUp { step: u64, threshold: f64 },

    #[error("non-finite value in RK4 stage {stage}")]
    NonFiniteStage { stage: u8 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward called before a forward pass was recorded")]
    NoForwardPass,

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("version mismatch: {what} has version {found}, expected {expected}")]
    Version {
        what: String,
        found: u32,
        expected: u32,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
