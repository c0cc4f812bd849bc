use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid utility: {0}")]
    InvalidUtility(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("arbitrage detected at node `{node}`")]
    Arbitrage { node: String },

    #[error("growth certificate falsified at lambda={lambda}, x={x}, node `{node}`: {lhs} > {rhs}")]
    GrowthFalsified {
        lambda: f64,
        x: f64,
        node: String,
        lhs: f64,
        rhs: f64,
    },

    #[error("missing certificate for node `{0}`")]
    MissingCertificate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("wealth {wealth} leaves the gridded range [0, {max}] at node `{node}`")]
    OutOfRange { node: String, wealth: f64, max: f64 },

    #[error("inadmissible strategy: wealth {wealth} at node `{node}`")]
    Inadmissible { node: String, wealth: f64 },

    #[error("search space of {0} points exceeds the oracle cap")]
    SearchTooLarge(f64),

    #[error("bound unavailable: {0}")]
    BoundUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
