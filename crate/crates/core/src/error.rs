use thiserror::Error;

/// Every failure the library can report, grouped by class.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("inconsistent data: {0}")]
    Data(String),
    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },
    #[error("statistic undefined: {0}")]
    UndefinedStatistic(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::format("csv", e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
