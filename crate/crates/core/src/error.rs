use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid architecture, training or evaluation settings.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Values outside the domain of an operation (out-of-range class index,
    /// non-finite parameter, negative count, ...).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("training failed at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    /// Queue configuration with traffic intensity ρ ≥ 1.
    #[error("unstable queue: traffic intensity {rho} >= 1")]
    Unstable { rho: f64 },

    /// The requested computation exceeds a hard cap; the message names the
    /// alternative.
    #[error("capability exceeded: {0}")]
    Capability(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint checksum mismatch")]
    Checksum,

    /// A reference posterior failed its own validity diagnostics.
    #[error("reference posterior invalid: {0}")]
    ReferenceInvalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Shape {
            context,
            expected,
            got,
        }
    }
}
