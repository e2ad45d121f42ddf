use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("Newton iteration did not converge at step {step} (t = {time:.6} s)")]
    NonConvergence { step: usize, time: f64 },
    #[error("singular Jacobian at step {step} (t = {time:.6} s)")]
    SingularJacobian { step: usize, time: f64 },
    #[error("inconsistent initial state: algebraic residual {residual:.3e} exceeds tolerance")]
    InconsistentInitial { residual: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid event schedule: {0}")]
    InvalidEvents(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("data file missing: {0}")]
    DataFileMissing(String),
    #[error("malformed case data (line {line}): {msg}")]
    DataFormat { line: usize, msg: String },
    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e})")]
    PowerFlow { iterations: usize, mismatch: f64 },
    #[error("no physical motor operating point: {0}")]
    NoPhysicalSolution(String),
    #[error("objective evaluation failed at p = {p:?}: {reason}")]
    ObjectiveFailure { p: Vec<f64>, reason: String },
    #[error("predicted model decrease {0:.3e} is not positive")]
    DegenerateModelDecrease(f64),
    #[error("envelope time grids differ")]
    GridMismatch,
    #[error("slice requires a one-dimensional parameter box, got {0} dimensions")]
    NotOneDimensional(usize),
    #[error("invalid parameter box: {0}")]
    InvalidBox(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown state name `{0}`")]
    UnknownState(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
