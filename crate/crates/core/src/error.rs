use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline.
///
/// Every variant maps onto one of the CLI exit codes through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("homogeneous depth scale {w:e} is below the degeneracy threshold")]
    DepthDegenerate { w: f64 },

    #[error("pinhole reduction undefined: principal offset component is zero (Ox={ox}, Oy={oy})")]
    ReductionUndefined { ox: f64, oy: f64 },

    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("every projection of the scene was degenerate")]
    EmptyObservations,

    #[error("no point has at least two observations on a single viewpoint row")]
    AllPointsSkipped,

    #[error("not observable: {0}")]
    NotObservable(String),

    #[error("non-finite value encountered at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("no matching point ids between the two sets")]
    NoMatches,

    #[error("ground-truth depth of point {point_id} is zero")]
    ZeroGroundTruthDepth { point_id: u32 },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Process exit code: 2 validation, 3 not observable, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::NotObservable(_) | Error::AllPointsSkipped => 3,
            Error::DepthDegenerate { .. }
            | Error::NonFinite { .. }
            | Error::ReductionUndefined { .. }
            | Error::EmptyObservations => 4,
            Error::InvalidIntrinsics(_)
            | Error::NoMatches
            | Error::ZeroGroundTruthDepth { .. }
            | Error::Validation(_)
            | Error::Io { .. }
            | Error::Parse { .. } => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage labels stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
