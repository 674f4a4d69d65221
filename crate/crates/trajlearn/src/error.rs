use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the whole crate.
///
/// `exit_code` groups the kinds the way the command-line tool reports them:
/// configuration and input problems exit with 2, numerical failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Log map or transport requested between (nearly) antipodal sphere points.
    #[error("degenerate geodesic: {0}")]
    DegenerateGeodesic(String),

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    /// A covariance factorization failed or a quantity left the representable range.
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    /// A mixture component collapsed (no responsibility mass).
    #[error("degenerate component {component}: {message}")]
    DegenerateComponent { component: usize, message: String },

    /// Two constraints resolved to the same mixture component.
    #[error("constraint collision on component {component}: {message}")]
    ConstraintCollision { component: usize, message: String },

    /// The activation constraints cannot be satisfied; names the blocking component.
    #[error("infeasible constraint set (component {component}): {message}")]
    Infeasible { component: usize, message: String },

    #[error("corrupt model: {0}")]
    CorruptModel(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Prefixes the message with `context` (e.g. the frame a per-frame fit
    /// failed in), keeping the error kind.
    pub fn with_context(self, context: &str) -> Error {
        match self {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{context}: {m}")),
            Error::DegenerateGeodesic(m) => Error::DegenerateGeodesic(format!("{context}: {m}")),
            Error::InvalidFrame(m) => Error::InvalidFrame(format!("{context}: {m}")),
            Error::NumericalDegeneracy(m) => {
                Error::NumericalDegeneracy(format!("{context}: {m}"))
            }
            Error::DegenerateComponent { component, message } => Error::DegenerateComponent {
                component,
                message: format!("{context}: {message}"),
            },
            Error::ConstraintCollision { component, message } => Error::ConstraintCollision {
                component,
                message: format!("{context}: {message}"),
            },
            Error::Infeasible { component, message } => Error::Infeasible {
                component,
                message: format!("{context}: {message}"),
            },
            Error::CorruptModel(m) => Error::CorruptModel(format!("{context}: {m}")),
            Error::Parse { line, message } => Error::Parse {
                line,
                message: format!("{context}: {message}"),
            },
            other => other,
        }
    }

    /// Process exit code the CLI uses for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalDegeneracy(_)
            | Error::DegenerateComponent { .. }
            | Error::DegenerateGeodesic(_)
            | Error::Infeasible { .. } => 3,
            _ => 2,
        }
    }
}
