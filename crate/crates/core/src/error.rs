use thiserror::Error;

/// Errors produced while building, sharding or simulating a workload.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, out of range or inconsistent.
    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// The per-node working set does not fit in local + expanded memory.
    #[error("infeasible configuration: {needed} bytes needed, {available} bytes available")]
    Infeasible { needed: u64, available: u64 },

    /// Operational intensity requested for a layer that moves no bytes.
    #[error("operational intensity undefined: layer moves zero bytes")]
    UndefinedIntensity,

    /// A compute delay was requested against zero attainable performance.
    #[error("attainable performance is zero")]
    ZeroPerformance,

    /// A ratio against zero compute time.
    #[error("total compute time is zero")]
    ZeroCompute,

    #[error("failed to parse `{path}`: {reason}")]
    Parse { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }

    /// True for errors caused by the filesystem rather than the configuration.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
