//! Process exit codes and the error type that carries them.

use std::fmt;

use donn_core::DonnError;

pub const OK: u8 = 0;
pub const FAILURE: u8 = 1;
pub const CONFIG: u8 = 2;
pub const DATASET: u8 = 3;
pub const CHECKPOINT: u8 = 4;
pub const IO: u8 = 5;

/// An error paired with the exit code the process should return.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code,
            error: error.into(),
        }
    }

    pub fn msg(code: u8, msg: impl fmt::Display) -> Self {
        Failure::new(code, anyhow::anyhow!("{msg}"))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Default code for an engine error raised outside any more specific phase.
pub fn code_for(e: &DonnError) -> u8 {
    match e {
        DonnError::Usage(_) | DonnError::Domain(_) => CONFIG,
        DonnError::Validation(_) => DATASET,
        DonnError::Dimension(_) | DonnError::Format(_) => CHECKPOINT,
        DonnError::Io { .. } | DonnError::Image { .. } => IO,
        DonnError::Numeric { .. } => FAILURE,
    }
}

impl From<DonnError> for Failure {
    fn from(e: DonnError) -> Self {
        Failure::new(code_for(&e), e)
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Attaches an exit code to engine errors of one command phase.
pub trait Phase<T> {
    /// Dataset phase: any failure to read or validate data.
    fn dataset(self) -> CliResult<T>;
    /// Checkpoint phase: everything except plain I/O maps to the checkpoint code.
    fn checkpoint(self) -> CliResult<T>;
    fn config(self) -> CliResult<T>;
}

impl<T> Phase<T> for Result<T, DonnError> {
    fn dataset(self) -> CliResult<T> {
        self.map_err(|e| Failure::new(DATASET, e))
    }

    fn checkpoint(self) -> CliResult<T> {
        self.map_err(|e| match e {
            DonnError::Io { .. } => Failure::new(IO, e),
            e => Failure::new(CHECKPOINT, e),
        })
    }

    fn config(self) -> CliResult<T> {
        self.map_err(|e| Failure::new(CONFIG, e))
    }
}
