use std::path::PathBuf;

/// Errors produced by every layer of the crate, from operator
/// construction up to experiment orchestration.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("operator is rank deficient: effective rank {rank} < n = {n}")]
    RankDeficient { rank: usize, n: usize },

    #[error("{which} basis is not orthonormal: max deviation {deviation:.3e} exceeds 1e-8")]
    NotOrthonormal { which: &'static str, deviation: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate signal: ||x||^2 = 0 makes the log term of the bound undefined")]
    DegenerateSignal,

    #[error("observed eigenvalue at index {index} is zero")]
    ZeroObservedEigenvalue { index: usize },

    #[error("unknown noise family `{0}`")]
    UnknownFamily(String),

    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),

    #[error("tail certificate violated at {point}: {detail}")]
    CertificateViolated { point: String, detail: String },

    #[error("exhaustive enumeration over 2^{n} subsets refused (limit n <= {max})")]
    EnumerationTooLarge { n: usize, max: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
