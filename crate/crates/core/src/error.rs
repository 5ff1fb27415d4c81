use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("masked_softmax: row {row} has no valid position")]
    DegenerateRow { row: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("adam: parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("duplicate observation: instance `{instance}`, variable {variable}, timestamp {timestamp}")]
    DuplicateObservation {
        instance: String,
        variable: usize,
        timestamp: f64,
    },
    #[error("instance `{0}` carries inconsistent labels")]
    InconsistentLabel(String),
    #[error("instance `{instance}`: no observation before split time {split_time}")]
    DegenerateSplit { instance: String, split_time: f64 },
    #[error("variables absent from training data: {0:?}")]
    MissingVariables(Vec<usize>),
    #[error("batch mixes instances with {expected} and {found} variables")]
    InconsistentVariables { expected: usize, found: usize },

    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Divergence { epoch: usize },
    #[error("evaluation: empty target set")]
    EmptyTargets,
    #[error("AUROC is undefined: test set contains a single class")]
    SingleClass,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures caused by numerics rather than invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::Divergence { .. } | Error::DegenerateRow { .. }
        )
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
