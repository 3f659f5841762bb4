use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("underdetermined: need at least {required} points, got {got}")]
    Underdetermined { required: usize, got: usize },

    #[error("degenerate cloud: covariance is rank-deficient (planar or collinear points)")]
    DegenerateCloud,

    #[error("all points rejected as outliers: {effective} effective inliers, need {required}")]
    AllOutliers { effective: usize, required: usize },

    #[error("zero-area mesh")]
    ZeroAreaMesh,

    #[error("mesh not watertight; run resample/repair")]
    NotWatertight,

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("cannot compose split: {0}")]
    CannotComposeSplit(String),

    #[error("unknown noun label `{0}`")]
    UnknownNoun(String),

    #[error("prediction mismatch in fold `{fold}`: missing ids {missing:?}, extra ids {extra:?}")]
    PredictionMismatch {
        fold: String,
        missing: Vec<String>,
        extra: Vec<String>,
    },

    #[error("parse error in {source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Unreadable or malformed input.
    Input,
    /// The computation itself failed on valid input.
    Algorithm,
    /// Inputs are individually valid but violate a pairing contract.
    Contract,
}

impl Error {
    pub fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. }
            | Error::Io(_)
            | Error::Json(_)
            | Error::InvalidParameter(_)
            | Error::UnknownNoun(_) => ErrorClass::Input,
            Error::Underdetermined { .. }
            | Error::DegenerateCloud
            | Error::AllOutliers { .. }
            | Error::ZeroAreaMesh
            | Error::NotWatertight
            | Error::CannotComposeSplit(_) => ErrorClass::Algorithm,
            Error::IncompatibleGrids(_) | Error::PredictionMismatch { .. } => ErrorClass::Contract,
        }
    }
}
