use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("parameters violate the inequality's hypotheses: {}", .0.join(", "))]
    InvalidParams(Vec<String>),

    #[error("balance condition cannot be solved for `{field}`: {reason}")]
    Unsolvable { field: &'static str, reason: String },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("negative value {value} at cell {index} where a non-negative function is required")]
    NegativeValue { index: usize, value: f64 },

    #[error("singular kernel evaluation at a = s = {a}, t = 0")]
    SingularKernel { a: f64 },

    #[error("zero function where a nonzero one is required")]
    ZeroFunction,

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
