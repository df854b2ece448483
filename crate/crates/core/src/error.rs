use thiserror::Error;

/// Errors raised by assembly, solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix not SPD (pivot {pivot:.3e} at row {row})")]
    NotSpd { row: usize, pivot: f64 },

    #[error("singular tridiagonal system (zero pivot at row {0})")]
    SingularTridiagonal(usize),

    #[error("pcg did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    PcgNotConverged { iterations: usize, residual: f64 },

    #[error("zero factor: {0}")]
    ZeroFactor(&'static str),

    #[error("levels are not nested: {0}")]
    NotNested(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
