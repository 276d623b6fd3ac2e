use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A request would exceed a configured size limit.
    #[error("resource bound exceeded: {what} = {requested} (maximum {maximum})")]
    ResourceBound {
        what: &'static str,
        requested: u64,
        maximum: u64,
    },

    /// The Euler recursion produced a non-finite value.
    #[error("scheme diverged at step {step}")]
    Divergence { step: usize },

    /// A replication of an ensemble diverged.
    #[error("replication {replication} diverged at step {step}")]
    ReplicationDiverged { replication: usize, step: usize },

    /// A refinement or quadrature did not reach its tolerance.
    #[error("accuracy error: {0}")]
    Accuracy(String),

    /// An optional capability (such as a Jacobian) is required but absent.
    #[error("missing capability: {0}")]
    Capability(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
