use thiserror::Error;

/// Errors produced anywhere in the completion pipeline.
#[derive(Debug, Error)]
pub enum EdmcError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("index ({i}, {j}) out of range for n = {n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },

    #[error("not embeddable: leading eigenvalue {eigenvalue} is negative beyond tolerance")]
    NotEmbeddable { eigenvalue: f64 },

    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),

    #[error("degenerate oversampling denominator for n = {n}, r = {r}")]
    DegenerateDenominator { n: usize, r: usize },

    #[error("degenerate initialization: {0}")]
    DegenerateInit(String),

    #[error("degenerate step size: denominator {denominator}")]
    DegenerateStep { denominator: f64 },

    #[error("degenerate iterate: only {found} of {required} nonzero eigenvalues")]
    RankCollapse { found: usize, required: usize },

    #[error("dimension {n} too large for dense materialization (limit {limit})")]
    TooLarge { n: usize, limit: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl EdmcError {
    /// Short machine-readable tag, used in error JSON written by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            EdmcError::InvalidInput(_) => "invalid_input",
            EdmcError::ShapeMismatch(_) => "shape_mismatch",
            EdmcError::IndexOutOfRange { .. } => "index_out_of_range",
            EdmcError::NotEmbeddable { .. } => "not_embeddable",
            EdmcError::InvalidProbability(_) => "invalid_probability",
            EdmcError::DegenerateDenominator { .. } => "degenerate_denominator",
            EdmcError::DegenerateInit(_) => "degenerate_init",
            EdmcError::DegenerateStep { .. } => "degenerate_step",
            EdmcError::RankCollapse { .. } => "rank_collapse",
            EdmcError::TooLarge { .. } => "too_large",
            EdmcError::Io(_) => "io",
            EdmcError::Csv(_) => "csv",
            EdmcError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, EdmcError>;
