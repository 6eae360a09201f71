use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("unreadable input: {0}")]
    Input(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no data")]
    NoData,

    #[error("empty range")]
    EmptyRange,

    #[error("non-finite input: {0}")]
    NonFinite(f64),

    #[error("degenerate outcome")]
    DegenerateOutcome,

    #[error("complete separation: MLE does not exist")]
    Separation,

    #[error("non-identifiable design")]
    NonIdentifiable,

    #[error("fit did not converge")]
    NotConverged,

    #[error("no curvature")]
    NoCurvature,

    #[error("cohorts overlap: {0}")]
    OverlappingCohorts(String),
}

impl Error {
    /// Short machine-parsable category used by the CLI's error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io(_) | Error::Input(_) => "input",
            Error::InvalidArgument(_) | Error::OverlappingCohorts(_) => "argument",
            Error::NoData | Error::EmptyRange => "data",
            Error::NonFinite(_)
            | Error::DegenerateOutcome
            | Error::Separation
            | Error::NonIdentifiable
            | Error::NotConverged
            | Error::NoCurvature => "model",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Input(e.to_string())
    }
}
