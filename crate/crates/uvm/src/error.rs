//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by model construction, simulation and training.
#[derive(Debug, Error)]
pub enum UvmError {
    /// A domain precondition was violated (bad bounds, out-of-range input, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A shape or dimension mismatch between arrays.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A non-finite value appeared where finite arithmetic is required.
    #[error("non-finite value in {context}")]
    NonFinite {
        /// Where the non-finite value was detected.
        context: String,
    },

    /// Configuration-level inconsistency (cross-field validation).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A numerical procedure failed (factorization, stability condition, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A failure during training, annotated with the time step and epoch.
    #[error("training failed at step {step}, epoch {epoch}: {source}")]
    Training {
        /// Backward time index of the failing step.
        step: usize,
        /// Epoch within the step.
        epoch: usize,
        /// Underlying failure.
        #[source]
        source: Box<UvmError>,
    },

    /// Checkpoint serialization problems.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Filesystem errors while writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, UvmError>;

impl UvmError {
    /// Attach (step, epoch) context to a training sub-failure.
    pub fn at_step(self, step: usize, epoch: usize) -> UvmError {
        UvmError::Training {
            step,
            epoch,
            source: Box::new(self),
        }
    }
}
