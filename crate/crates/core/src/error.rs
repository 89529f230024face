use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at offset {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("unknown identifier '{name}' at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite result: {0}")]
    NonFinite(String),
    #[error(
        "eigenvector matrix condition number {cond:.3e} exceeds 1e8; supply the Jordan structure \
         (block sizes and generalized eigenvectors) explicitly"
    )]
    Defective { cond: f64 },
    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("exponential overflow: kappa_1 * t = {0:.3} exceeds 700")]
    Range(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("condition violated: {0}")]
    Condition(String),
    #[error("integration failed at t = {t}: {msg}")]
    Integration { t: f64, msg: String },
    #[error("data matrix is ill-conditioned (condition number {cond:.3e} > 1e10)")]
    IllConditioned { cond: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("mode {mode:?}: {source}")]
    Mode { mode: Vec<i64>, source: Box<Error> },
}

impl Error {
    /// Exit-code class: 1 input/configuration, 2 condition failure, 3 numerical.
    pub fn exit_class(&self) -> i32 {
        match self {
            Error::Syntax { .. }
            | Error::UnknownIdentifier { .. }
            | Error::Dimension(_)
            | Error::Invalid(_)
            | Error::IndexOutOfRange { .. }
            | Error::Defective { .. } => 1,
            Error::Condition(_) => 2,
            Error::Domain(_)
            | Error::NonFinite(_)
            | Error::Range(_)
            | Error::Integration { .. }
            | Error::IllConditioned { .. }
            | Error::Numerical(_) => 3,
            Error::Mode { source, .. } => source.exit_class(),
        }
    }

    pub fn in_mode(self, mode: &[i64]) -> Error {
        Error::Mode { mode: mode.to_vec(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
