//! Heat transport through quadratic open quantum systems coupled to thermal
//! reservoirs, computed from dressed two-time kernels.

pub mod bath;
pub mod dyson;
pub mod error;
pub mod evolution;
pub mod linalg;
pub mod oracle;
pub mod quadrature;
pub mod solver;
pub mod system;
pub mod timegrid;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};
