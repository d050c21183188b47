use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("variance overflow at row {row}")]
    VarianceOverflow { row: usize },

    #[error("{0}")]
    Collinear(String),

    /// The outcome variance does not vary with the instruments, so the
    /// selection bias and the causal effect cannot be separated.
    #[error("not identified: {0}")]
    NotIdentified(String),

    #[error("insufficient stratum data: {0}")]
    InsufficientData(String),

    #[error("{0}")]
    Divergence(String),

    #[error("one-step unavailable: singular information")]
    SingularInformation,

    #[error("diagnostic unavailable: {0}")]
    DiagnosticUnavailable(String),

    #[error("weak first stage (F = {0:.3e})")]
    WeakFirstStage(f64),

    #[error("degenerate component: {0}")]
    DegenerateComponent(String),

    #[error("gamma weakly identified")]
    GammaWeaklyIdentified,

    #[error("gamma out of numeric range")]
    GammaOutOfRange,

    #[error("semiparam requires finite-support instruments (column {0} has more than 3 levels)")]
    ContinuousInstrument(usize),

    #[error("method/shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures caused by the data failing to identify the target
    /// parameters rather than by numerics.
    pub fn is_identification(&self) -> bool {
        matches!(
            self,
            Error::NotIdentified(_) | Error::DiagnosticUnavailable(_) | Error::GammaWeaklyIdentified
        )
    }
}
