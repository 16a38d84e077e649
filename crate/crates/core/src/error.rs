use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix is not positive definite (failed at pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite importance log-weight for projection sample {index}")]
    NonFiniteWeight { index: usize },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(
        "topology with {nodes} nodes and {edges} edges is not a tree; reduce it with spanning_tree first"
    )]
    NotATree { nodes: usize, edges: usize },
    #[error("graph is disconnected into components {components:?}")]
    Disconnected { components: Vec<Vec<usize>> },
    #[error(
        "latent covariance lost positive definiteness at pooled point {index}; use a larger jitter or fewer points"
    )]
    GenerationNotPositiveDefinite { index: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn ensure_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
