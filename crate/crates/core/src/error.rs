use thiserror::Error;

/// Errors produced by the numerical models.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("level index out of range: ({i}, {j}) with {levels} levels available")]
    IndexOutOfRange { i: usize, j: usize, levels: usize },

    #[error(
        "diagonalization did not converge: relative change {change:.3e} at basis size {basis_size}"
    )]
    Convergence { change: f64, basis_size: usize },

    #[error("internal numerical error: {0}")]
    Internal(String),

    #[error("fit diverged after {iterations} iterations: {reason}")]
    FitDivergence { iterations: usize, reason: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Fails with [`Error::InvalidParameter`] unless `ok` holds.
pub(crate) fn ensure(ok: bool, name: &'static str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(invalid(name, reason))
    }
}

pub(crate) fn ensure_probability(p: f64, name: &'static str) -> Result<()> {
    ensure(
        (0.0..=1.0).contains(&p),
        name,
        format!("{p} is not a probability in [0, 1]"),
    )
}
