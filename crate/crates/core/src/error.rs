use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("product {0} has no feasible package type")]
    InfeasibleProduct(usize),

    #[error("assignment is infeasible for product {product}: type {package} is masked")]
    InfeasibleAssignment { product: usize, package: usize },

    #[error("lambda must be non-negative and finite, got {0}")]
    NegativeLambda(f64),

    #[error("package index {index} out of range for {count} types")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("training data contains a single class")]
    SingleClassData,

    #[error("non-finite feature value in record {0}")]
    NonFiniteFeature(usize),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("value outside the open unit interval: {0}")]
    DomainError(f64),

    #[error("exhaustive search refused: {products} products exceeds the limit of {limit}")]
    InstanceTooLarge { products: usize, limit: usize },

    #[error("no assignment satisfies the damage budget {0}")]
    NoFeasibleSolution(f64),

    #[error("property violated: {0}")]
    PropertyViolation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
