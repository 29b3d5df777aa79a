use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("size measure at index {index} is not positive ({value})")]
    NonPositiveSize { index: usize, value: f64 },

    #[error("unit {index} would have inclusion probability {pi} > 1 (certainty unit)")]
    CertaintyUnit { index: usize, pi: f64 },

    #[error(
        "design has {count} possible samples, above the enumeration cap of {cap}; use monte_carlo_tensor instead"
    )]
    EnumerationCap { count: u128, cap: u128 },

    #[error("zero inclusion probability: {0}")]
    ZeroProbability(String),

    #[error("missing probability: {0}")]
    MissingProbability(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty domain: {0}")]
    EmptyDomain(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("output {0} exists; pass --force to overwrite")]
    OutputExists(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable kind, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::NonPositiveSize { .. } => "nonpositive_size",
            Error::CertaintyUnit { .. } => "certainty_unit",
            Error::EnumerationCap { .. } => "enumeration_cap",
            Error::ZeroProbability(_) => "zero_probability",
            Error::MissingProbability(_) => "missing_probability",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::EmptyDomain(_) => "empty_domain",
            Error::Sampler(_) => "sampler",
            Error::Numerical(_) => "numerical",
            Error::OutputExists(_) => "output_exists",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
