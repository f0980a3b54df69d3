use thiserror::Error;

/// Errors raised by the transport engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("frequency quadrature did not converge (residual estimate {residual:.3e})")]
    QuadratureNonConvergence { residual: f64 },

    #[error("{stage}: solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        stage: String,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("{stage}: residual grew for 5 consecutive iterations at iteration {iteration} (residual {residual:.3e})")]
    Divergence {
        stage: String,
        iteration: usize,
        residual: f64,
    },

    #[error("time step rejected at node {node}: trace drift {drift:.3e}")]
    StepRejected { node: usize, drift: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by an iterative solver failing to converge.
    pub fn is_nonconvergence(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Divergence { .. }
                | Error::QuadratureNonConvergence { .. }
                | Error::StepRejected { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
