use hyperlab::boundary_operators::OperatorError;
use hyperlab::furstenberg_lab::FurstenbergError;
use hyperlab::llt_lab::LltError;
use hyperlab::measures::MeasureError;
use hyperlab::spherical_analysis::TransformError;
use thiserror::Error;

/// Exit status: 0 ok, 1 I/O or failed self-test, 2 validation, 3 numerical,
/// 4 budget.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0} self-test check(s) failed")]
    SelfTest(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io(_) | Self::SelfTest(_) => 1,
            Self::Validation(_) => 2,
            Self::Numerical(_) => 3,
            Self::Budget(_) => 4,
        }
    }
}

impl From<OperatorError> for CliError {
    fn from(e: OperatorError) -> Self {
        match e {
            OperatorError::Aliasing { .. } | OperatorError::Invalid(_) => Self::Validation(e.to_string()),
            OperatorError::Io(io) => Self::Io(io),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        match e {
            MeasureError::AtomCap { .. } => Self::Budget(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<LltError> for CliError {
    fn from(e: LltError) -> Self {
        match e {
            LltError::Operator(op) => op.into(),
            LltError::Measure(m) => m.into(),
            LltError::AtomCap { .. } => Self::Budget(e.to_string()),
            LltError::Config(_) | LltError::Transform(TransformError::Parameter(_) | TransformError::GridMismatch { .. }) => {
                Self::Validation(e.to_string())
            }
            LltError::Transform(_) => Self::Numerical(e.to_string()),
            LltError::Calibration { .. } => Self::Numerical(e.to_string()),
        }
    }
}

impl From<FurstenbergError> for CliError {
    fn from(e: FurstenbergError) -> Self {
        match e {
            FurstenbergError::Operator(op) => op.into(),
            FurstenbergError::FixedPoint { .. } => Self::Numerical(e.to_string()),
            FurstenbergError::Invalid(_) => Self::Validation(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(std::io::Error::other(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(std::io::Error::other(e))
    }
}
