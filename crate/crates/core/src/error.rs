use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("measure has no mass")]
    EmptyMeasure,

    #[error("empty input list")]
    EmptyInput,

    #[error("weights sum to {total}, expected a probability vector")]
    NotProbability { total: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid barycenter weights: {0}")]
    InvalidWeights(String),

    #[error(
        "linear program needs {columns} product columns, cap is {cap}; \
         thin the layers (fewer atoms per slice) or raise the cap"
    )]
    ProblemTooLarge { columns: usize, cap: usize },

    #[error("linear program failed: {0}")]
    Solver(String),

    #[error("unsupported horizontal dimension {dim}: {reason}")]
    UnsupportedDim { dim: usize, reason: &'static str },

    #[error("quantile level {0} outside (0, 1]")]
    InvalidQuantile(f64),

    #[error("internal energy exponent {0} must be >= 1")]
    InvalidExponent(f64),

    #[error("phenotype `{0}` needs a density (gridded input)")]
    NeedsDensity(String),

    #[error("unknown phenotype `{0}`")]
    UnknownPhenotype(String),

    #[error("malformed limb {limb}: {reason}")]
    MalformedLimb { limb: usize, reason: String },

    #[error("ghost has {tuples} index tuples, cap is {cap}")]
    GhostTooLarge { tuples: usize, cap: usize },

    #[error("vertical density bounds L, U are not declared")]
    BoundsUnavailable,

    #[error("vertical marginal is not bi-Lipschitz: {0}")]
    NotBiLipschitz(String),

    #[error("barycenter violates W3: {0}")]
    W3ViolationDetected(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code, used by the CLI error documents.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyMeasure => "EmptyMeasure",
            Error::EmptyInput => "EmptyInput",
            Error::NotProbability { .. } => "NotProbability",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::InvalidMeasure(_) => "InvalidMeasure",
            Error::InvalidWeights(_) => "InvalidWeights",
            Error::ProblemTooLarge { .. } => "ProblemTooLarge",
            Error::Solver(_) => "SolverFailure",
            Error::UnsupportedDim { .. } => "UnsupportedDim",
            Error::InvalidQuantile(_) => "InvalidQuantile",
            Error::InvalidExponent(_) => "InvalidExponent",
            Error::NeedsDensity(_) => "NeedsDensity",
            Error::UnknownPhenotype(_) => "UnknownPhenotype",
            Error::MalformedLimb { .. } => "MalformedLimb",
            Error::GhostTooLarge { .. } => "GhostTooLarge",
            Error::BoundsUnavailable => "BoundsUnavailable",
            Error::NotBiLipschitz(_) => "NotBiLipschitz",
            Error::W3ViolationDetected(_) => "W3ViolationDetected",
            Error::Parse(_) => "ParseError",
            Error::Io(_) => "IoError",
        }
    }
}
