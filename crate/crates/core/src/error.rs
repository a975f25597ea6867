use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("feature map incompatible with path set: {0}")]
    FeatureMismatch(String),

    #[error("non-finite loss at path {path}: {detail}")]
    NonFiniteLoss { path: usize, detail: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("rank-deficient regressors: {0}")]
    RankDeficient(String),

    #[error("degenerate tridiagonal system at maturity {maturity}, strike {strike}: {detail}")]
    Tridiagonal {
        maturity: usize,
        strike: usize,
        detail: String,
    },

    #[error("all gains are -inf; measure change undefined")]
    DegenerateGains,

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
