use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("zero bandwidth: delta must be at least {min:e}")]
    ZeroBandwidth { min: f64 },

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("lambert W domain error: x = {x} is below -1/e")]
    LambertDomain { x: f64 },

    #[error("varphi bracket failure: {0}")]
    VarphiBracket(String),

    #[error("delay target {e_target} s is below the infinite-bandwidth delay floor {floor} s")]
    InfeasibleDelay { e_target: f64, floor: f64 },

    #[error("nothing scheduled: every subscription indicator is zero")]
    NothingScheduled,

    #[error("weights must sum to 1, got {sum}")]
    BadWeights { sum: f64 },

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_round(self, round: usize) -> Self {
        Error::Round {
            round,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
