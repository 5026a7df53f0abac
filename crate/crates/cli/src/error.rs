use std::fmt;
use std::process::ExitCode;

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration; exit code 1.
    Usage(String),
    /// Failure while doing the work; exit code 2.
    Runtime(String),
}

pub type CliResult<T = ()> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<fasrgan::Error> for CliError {
    fn from(e: fasrgan::Error) -> Self {
        match e {
            fasrgan::Error::Config(_) | fasrgan::Error::UnsupportedScale(_) => CliError::Usage(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn runtime(msg: impl Into<String>) -> CliError {
    CliError::Runtime(msg.into())
}

/// Wraps an I/O failure on `path` as a runtime error.
pub fn io(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {}", path.display(), e))
}
