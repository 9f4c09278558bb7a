use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("column {0} has zero norm")]
    ZeroColumn(usize),

    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),

    #[error("singular Gram matrix on support {0:?}")]
    SingularGram(Vec<usize>),

    #[error("invalid support: {0}")]
    InvalidSupport(String),

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("coherence target {0} unreachable")]
    Unreachable(f64),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("enumeration of C({n},{k}) subsets exceeds the guard")]
    TooLarge { n: usize, k: usize },

    #[error("matrix is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("invalid k={k} for {n} categories")]
    InvalidK { k: usize, n: usize },

    #[error("probability at index {0} is zero or underflows")]
    ZeroProbability(usize),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("probe matrix is entirely zero")]
    DegenerateProbe,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
