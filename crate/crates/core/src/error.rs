use std::path::PathBuf;

/// Errors raised by the numerical kernels, solvers, estimators and loaders.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("numerical overflow: {what} = {value}")]
    NonFinite { what: String, value: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("step size underflow at t = {time:.6e} (h = {step:.3e})")]
    StepUnderflow { time: f64, step: f64 },

    #[error("adjoint sweep diverged at grid index {step}")]
    AdjointDivergence { step: usize },

    #[error("task {task}: {source}")]
    Task {
        task: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("degenerate target: normalizer is zero")]
    DegenerateTarget,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn non_finite(what: impl Into<String>, value: f64) -> Self {
        Error::NonFinite {
            what: what.into(),
            value,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// Attaches a task id, leaving already-tagged errors alone.
    pub fn for_task(self, task: u64) -> Self {
        match self {
            Error::Task { .. } => self,
            other => Error::Task {
                task,
                source: Box::new(other),
            },
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_finite(what: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::non_finite(format!("{what}[{i}]"), values[i])),
    }
}
