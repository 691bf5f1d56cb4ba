use alloc::string::String;

/// Errors raised by mesh construction, assembly and the solvers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate triangle {index} (area {area:e})")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("partition mismatch: {0}")]
    PartitionMismatch(String),
    #[error("non-finite value at x = {x}")]
    NonFinite { x: f64 },
    #[error("conflicting Dirichlet values {first} and {second} at node {node}")]
    DirichletConflict { node: usize, first: f64, second: f64 },
    #[error("linear solver failure: {0}")]
    Solver(String),
    #[error("density overflow: |u|/U_T = {ratio:.1} exceeds the admissible range")]
    DensityOverflow { ratio: f64 },
    #[error("internal error: {0}")]
    Internal(String),
    #[error("Gummel iteration did not converge after {iterations} iterations (last update {last_update:e} V)")]
    NotConverged {
        iterations: usize,
        last_update: f64,
        history: alloc::vec::Vec<f64>,
    },
    #[error("at V_DS = {bias}: {source}")]
    Sweep {
        bias: f64,
        source: alloc::boxed::Box<Error>,
    },
    #[error("meshes are not nested: {0}")]
    NotNested(String),
    #[error("not enough data points: {0}")]
    InsufficientData(String),
}

pub type Result<T> = core::result::Result<T, Error>;
