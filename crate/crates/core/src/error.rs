use thiserror::Error;

/// Errors raised anywhere in the identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("variable {0} does not belong to this tape")]
    ForeignVariable(usize),

    #[error("non-finite function value at coordinate {coordinate} of variable {variable}")]
    NonFiniteEvaluation { variable: usize, coordinate: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rollout diverged at step {step} (|y| = {magnitude:e})")]
    Diverged { step: usize, magnitude: f64 },

    #[error("unsupported model structure: {0}")]
    UnsupportedStructure(String),

    #[error("insufficient history: index {index} needs at least {needed} past samples")]
    InsufficientHistory { index: usize, needed: usize },

    #[error("infeasible batch start range: N = {samples}, m = {seq_len}, min start = {min_start}")]
    InfeasibleStartRange { samples: usize, seq_len: usize, min_start: usize },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite value in RK4 stage {stage}")]
    NonFiniteStage { stage: usize },

    #[error("training diverged: {skipped} of {iterations} iterations abandoned; lower the learning rate")]
    TrainingDiverged { skipped: usize, iterations: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("model file format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for failures caused by numerics rather than by usage.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Diverged { .. }
                | Error::NonFiniteGradient(_)
                | Error::NonFiniteStage { .. }
                | Error::NonFiniteEvaluation { .. }
                | Error::TrainingDiverged { .. }
                | Error::UndefinedMetric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
