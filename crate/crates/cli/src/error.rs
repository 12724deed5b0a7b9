use std::fmt;

use epigeom::Error;

/// Process exit codes. Clap itself exits with 2 on usage errors.
pub mod code {
    pub const IO: i32 = 3;
    pub const PARSE: i32 = 4;
    pub const INVALID_INPUT: i32 = 5;
    pub const INSUFFICIENT_DATA: i32 = 6;
    pub const ESTIMATION: i32 = 7;
    pub const NUMERICAL: i32 = 8;
    pub const CONFIG: i32 = 9;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(code::CONFIG, message)
    }

    /// Prefixes the message with what was being processed.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => code::IO,
        Error::Parse { .. } | Error::Format { .. } => code::PARSE,
        Error::InsufficientData { .. } => code::INSUFFICIENT_DATA,
        Error::DegenerateMotion(_)
        | Error::DegenerateConfiguration(_)
        | Error::EstimationFailure(_)
        | Error::AmbiguousDecomposition(_)
        | Error::NoIntersection(_)
        | Error::Visibility(_) => code::ESTIMATION,
        Error::DegenerateState(_) | Error::NumericalFailure { .. } => code::NUMERICAL,
        Error::InvalidInput(_)
        | Error::InvalidDepth(_)
        | Error::InvalidWarp(_)
        | Error::Shape(_)
        | Error::EmptyInput(_)
        | Error::EmptyScene => code::INVALID_INPUT,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::new(exit_code(&e), e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches context to library errors.
pub trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T> Context<T> for epigeom::Result<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| CliError::from(e).context(what))
    }
}
