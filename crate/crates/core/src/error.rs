use std::fmt;

use thiserror::Error;

/// Where a positivity check failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Cell { cell: usize, point: usize },
    InteriorEdge { edge: usize, point: usize },
    BoundaryEdge { edge: usize, point: usize },
    Pointwise,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Cell { cell, point } => write!(f, "cell {cell}, quadrature point {point}"),
            Location::InteriorEdge { edge, point } => {
                write!(f, "interior edge {edge}, quadrature point {point}")
            }
            Location::BoundaryEdge { edge, point } => {
                write!(f, "boundary edge {edge}, quadrature point {point}")
            }
            Location::Pointwise => write!(f, "pointwise evaluation"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("positivity violation: {quantity} = {value:e} at {location}")]
    Positivity {
        quantity: &'static str,
        value: f64,
        location: Location,
    },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("degenerate Lagrangian: {0}")]
    DegenerateLagrangian(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Reject a nonpositive value with a structured error.
#[inline]
pub(crate) fn ensure_positive(quantity: &'static str, value: f64, location: Location) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Positivity {
            quantity,
            value,
            location,
        })
    }
}
