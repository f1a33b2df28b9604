use thiserror::Error;

pub type Result<T, E = GltError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GltError {
    #[error("node index {index} out of range for graph with {node_count} nodes")]
    NodeOutOfRange { index: usize, node_count: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({parent}, {child})")]
    DuplicateEdge { parent: usize, child: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no connected graph after {attempts} attempts")]
    RetryBudgetExhausted { attempts: usize },
    #[error("invalid seed distribution: {0}")]
    InvalidSeedDistribution(String),
    #[error("invalid threshold parameters: {0}")]
    InvalidThreshold(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("infeasible trace: {0}")]
    InfeasibleTrace(String),
    #[error("node {node} is already active at time {time}")]
    AlreadyActive { node: usize, time: usize },
    #[error("zero-probability factor for node {node} at time {time}")]
    ZeroProbability { node: usize, time: usize },
    #[error("enumeration cap of {cap} states exceeded")]
    CapExceeded { cap: usize },
    #[error("node {node} has no informative observations")]
    NoData { node: usize },
    #[error("nonpositive likelihood factor for node {node}")]
    NonPositiveLikelihood { node: usize },
    #[error("node {node} is not a parent of {child}")]
    NotAParent { node: usize, child: usize },
    #[error("invalid covariance for node {node}: smallest eigenvalue {min_eigenvalue:e}")]
    InvalidCovariance { node: usize, min_eigenvalue: f64 },
    #[error("nonpositive variance estimate {0:e}")]
    NonPositiveVariance(f64),
    #[error("graph is not bipartite: node {0} has both parents and children")]
    NotBipartite(usize),
    #[error("singular linear system")]
    SingularSystem,
    #[error("all threshold grid fits failed for node {node}")]
    GridFailed { node: usize },
}

impl GltError {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            GltError::NodeOutOfRange { .. } => "node-out-of-range",
            GltError::SelfLoop { .. } => "self-loop",
            GltError::DuplicateEdge { .. } => "duplicate-edge",
            GltError::InvalidArgument { .. } => "invalid-argument",
            GltError::RetryBudgetExhausted { .. } => "retry-budget-exhausted",
            GltError::InvalidSeedDistribution { .. } => "invalid-seed-distribution",
            GltError::InvalidThreshold { .. } => "invalid-threshold",
            GltError::InvalidModel { .. } => "invalid-model",
            GltError::InfeasibleTrace { .. } => "infeasible-trace",
            GltError::AlreadyActive { .. } => "already-active",
            GltError::ZeroProbability { .. } => "zero-probability",
            GltError::CapExceeded { .. } => "cap-exceeded",
            GltError::NoData { .. } => "no-data",
            GltError::NonPositiveLikelihood { .. } => "non-positive-likelihood",
            GltError::NotAParent { .. } => "not-a-parent",
            GltError::InvalidCovariance { .. } => "invalid-covariance",
            GltError::NonPositiveVariance { .. } => "non-positive-variance",
            GltError::NotBipartite { .. } => "not-bipartite",
            GltError::SingularSystem { .. } => "singular-system",
            GltError::GridFailed { .. } => "grid-failed",
        }
    }
}
