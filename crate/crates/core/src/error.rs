use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("hyperedge {edge} is empty")]
    EmptyHyperedge { edge: usize },
    #[error("hyperedge {edge} repeats vertex {vertex}")]
    DuplicateVertexInEdge { edge: usize, vertex: usize },
    #[error("vertex {vertex} is not incident to any hyperedge")]
    IsolatedVertex { vertex: usize },
    #[error("hyperedge {edge} has non-positive weight {weight}")]
    NonPositiveWeight { edge: usize, weight: f64 },
    #[error("matrix is not symmetric (max asymmetry {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("matrix is not a valid adjacency: {0}")]
    InvalidAdjacency(String),
    #[error("symmetric eigensolver failed: {0}")]
    EigenSolverFailure(String),
    #[error("hyperparameter `{name}` must be strictly positive, got {value}")]
    NonPositiveHyperparameter { name: &'static str, value: f64 },
    #[error("diffusion bandwidth must be nonnegative, got {0}")]
    NegativeBandwidth(f64),
    #[error("index {0} listed more than once")]
    DuplicateIndex(usize),
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: &'static str, expected: usize, found: usize },
    #[error("linear system is singular: {0}")]
    SingularSystem(String),
    #[error("objective became non-finite at step {step}: {diagnostics}")]
    NonFiniteObjective { step: usize, diagnostics: String },
    #[error("power iteration did not converge after {iterations} iterations (change {change:e})")]
    PowerIterationNoConvergence { iterations: usize, change: f64 },
    #[error("invalid cluster count k={k} for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("invalid inducing count J={j} for {n} vertices")]
    InvalidJ { j: usize, n: usize },
    #[error("invalid latent dimension Q={q} for {n} vertices")]
    InvalidQ { q: usize, n: usize },
    #[error("invalid value: {0}")]
    InvalidArgument(String),
    #[error("empty input")]
    EmptyInput,
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("vertex `{0}` listed more than once")]
    DuplicateLabel(String),
    #[error("vertex `{0}` has no label")]
    MissingLabel(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Numerical failures (as opposed to input or validation failures).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem(_)
                | Error::NonFiniteObjective { .. }
                | Error::EigenSolverFailure(_)
                | Error::PowerIterationNoConvergence { .. }
        )
    }

    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse { line, column, message: message.into() }
    }
}
