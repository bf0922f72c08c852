//! Command-line and HTTP front end for the scanner emulator.

pub mod cli;
pub mod conformance;
pub mod files;
pub mod server;
pub mod session;

/// Process exit status by outcome class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    NotConverged = 1,
    Usage = 2,
    Fault = 3,
    Mismatch = 4,
}

/// A failure with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    pub fn new(exit: Exit, message: impl Into<String>) -> Self {
        Self {
            exit,
            message: message.into(),
        }
    }

    pub fn usage(message: impl std::fmt::Display) -> Self {
        Self::new(Exit::Usage, message.to_string())
    }

    pub fn mismatch(message: impl std::fmt::Display) -> Self {
        Self::new(Exit::Mismatch, message.to_string())
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::new(Exit::Usage, format!("{}: {e}", path.display()))
    }
}

impl From<session::SessionError> for Failure {
    fn from(e: session::SessionError) -> Self {
        Failure::usage(e)
    }
}
