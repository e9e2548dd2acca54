use std::fmt;

/// Errors raised by the deconvolution library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("invalid parameter in {op}: {detail}")]
    Parameter { op: &'static str, detail: String },

    /// A matrix that must be inverted (or square-rooted) has an eigenvalue below the rank tolerance.
    #[error("singular matrix in {op}: eigenvalue {eigenvalue:e} is below tolerance {tolerance:e}")]
    Singular {
        op: &'static str,
        eigenvalue: f64,
        tolerance: f64,
    },

    #[error("contract violated in {op}: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("{op} did not converge after {iterations} iterations")]
    Iteration { op: &'static str, iterations: usize },

    #[error("line search stalled at iteration {}: no decrease down to step 1e-16", .0.iteration)]
    Stalled(Box<StallInfo>),

    #[error("all {attempts} sampled windows are zero; cannot initialize")]
    ZeroWindow { attempts: usize },

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("estimated cost {estimate:.3e} flops exceeds budget {cap:.3e}; {hint}")]
    Budget {
        estimate: f64,
        cap: f64,
        hint: String,
    },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
}

/// State carried out of a stalled descent so callers can inspect the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StallInfo {
    pub iteration: usize,
    pub q: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
}

impl fmt::Display for StallInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stalled at iteration {} (last objective {:?})",
            self.iteration,
            self.objective_trace.last()
        )
    }
}

impl Error {
    /// True for failures of the numerics (singularity, stalls, non-convergence) as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::Iteration { .. }
                | Error::Stalled(_)
                | Error::ZeroWindow { .. }
                | Error::DegenerateKernel(_)
        )
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn param(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Parameter {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
