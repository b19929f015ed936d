use std::path::PathBuf;

/// Errors raised anywhere in the forecasting pipeline.
///
/// Variants fall into three families that the command-line front end maps to
/// distinct exit codes: data problems (bad or inconsistent input), numerical
/// failures (divergence, singular systems), and argument/shape misuse.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("duplicate panel key (week {week}, district {district}, group {group})")]
    DuplicateKey {
        week: i32,
        district: usize,
        group: usize,
    },
    #[error("missing panel cell (week {week}, district {district}, group {group})")]
    MissingCell {
        week: i32,
        district: usize,
        group: usize,
    },
    #[error("negative case count {cases} at (week {week}, district {district}, group {group})")]
    NegativeCases {
        week: i32,
        district: usize,
        group: usize,
        cases: i64,
    },
    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: i64 },
    #[error("incomplete week {week} for district {district}: {days} daily values")]
    IncompleteWeek {
        week: i64,
        district: usize,
        days: usize,
    },
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("training diverged at epoch {epoch} (last finite epoch {last_finite:?})")]
    Divergence {
        epoch: usize,
        last_finite: Option<usize>,
    },
    #[error("singular matrix: smallest eigenvalue {min_eigenvalue:e}")]
    Singular { min_eigenvalue: f64 },
    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used by the command-line exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Numerical(_) | Error::Divergence { .. } | Error::Singular { .. } => {
                ErrorKind::Numerical
            }
            Error::InvalidArgument(_) | Error::Shape(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
