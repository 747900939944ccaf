use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("row {row}: unknown outcome label {label:?}")]
    UnknownOutcome { row: usize, label: String },

    #[error("need at least 2 distinct models after filtering, found {0}")]
    TooFewModels(usize),

    #[error("no decisive matchups after filtering")]
    NoDecisiveMatchups,

    #[error("unknown model {0:?}")]
    UnknownModel(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("weighting has length {found}, arena has {expected} matchups")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("all matchup weights are zero")]
    AllWeightsZero,

    #[error("perfect separation: the unregularized maximum likelihood estimate does not exist")]
    Separation,

    #[error("comparison graph is disconnected: scores are not identified without a ridge")]
    Disconnected,

    #[error("non-finite value encountered during fitting")]
    NonFinite,

    #[error(
        "fit did not converge (gradient max-norm {gradient:.3e} after {iterations} iterations)"
    )]
    Unconverged { iterations: usize, gradient: f64 },

    #[error("Hessian is singular or not positive definite")]
    SingularHessian,

    #[error("oracle would need {needed} refits, above the cap of {cap}")]
    OracleCapExceeded { needed: u128, cap: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
