use std::fmt;

/// A command failure, classified by the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration file, flag or setting.
    Config(String),
    /// A file or directory could not be read or written.
    Io(String),
    /// Inputs were readable but malformed, inconsistent or of the wrong shape.
    Invalid(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Io(_) => 3,
            Failure::Invalid(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, msg) = match self {
            Failure::Config(m) => ("configuration error", m),
            Failure::Io(m) => ("I/O error", m),
            Failure::Invalid(m) => ("invalid input", m),
        };
        write!(f, "{kind}: {msg}")
    }
}

impl std::error::Error for Failure {}

impl From<tad_core::Error> for Failure {
    fn from(e: tad_core::Error) -> Self {
        match e {
            tad_core::Error::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

impl From<rayon::ThreadPoolBuildError> for Failure {
    fn from(e: rayon::ThreadPoolBuildError) -> Self {
        Failure::Config(format!("cannot start worker pool: {e}"))
    }
}
