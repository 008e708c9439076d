use std::fmt;
use std::process::ExitCode;

/// Which exit code a failure maps to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Bad or inconsistent input data: exit 1.
    Data,
    /// Bad manifest, parameters or missing files: exit 2.
    Config,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: FailureKind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn data(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: FailureKind::Data,
            error: error.into(),
        }
    }

    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: FailureKind::Config,
            error: error.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self.kind {
            FailureKind::Data => ExitCode::from(1),
            FailureKind::Config => ExitCode::from(2),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type Outcome<T> = Result<T, Failure>;

pub trait Classify<T> {
    fn or_data(self, context: impl FnOnce() -> String) -> Outcome<T>;
    fn or_config(self, context: impl FnOnce() -> String) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_data(self, context: impl FnOnce() -> String) -> Outcome<T> {
        self.map_err(|e| Failure::data(e.into().context(context())))
    }

    fn or_config(self, context: impl FnOnce() -> String) -> Outcome<T> {
        self.map_err(|e| Failure::config(e.into().context(context())))
    }
}
