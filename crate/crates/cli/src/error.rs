use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl From<gqst::Error> for CliError {
    fn from(e: gqst::Error) -> Self {
        use gqst::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidParameter(_) => CliError::Usage(msg),
            E::Io(_) | E::Format(_) | E::Truncated { .. } | E::Shape(_) => CliError::Io(msg),
            E::Unphysical { .. } | E::OutOfDomain(_) | E::Estimation(_) | E::Divergence { .. } => {
                CliError::Numeric(msg)
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
