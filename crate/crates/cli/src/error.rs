use std::fmt;

/// Errors surfaced to the user, with their exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, files or values.
    Input(String),
    Lib(lipcert::Error),
    /// Failure writing the report.
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use lipcert::Error as E;
        match self {
            CliError::Input(_) => 2,
            CliError::Lib(
                E::Io { .. }
                | E::Json(_)
                | E::Layer { .. }
                | E::DimensionMismatch { .. }
                | E::NonFinite(_)
                | E::InvertedInterval { .. }
                | E::InvalidDomain(_)
                | E::Config(_),
            ) => 2,
            CliError::Lib(_) | CliError::Output(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Output(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<lipcert::Error> for CliError {
    fn from(e: lipcert::Error) -> Self {
        CliError::Lib(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
