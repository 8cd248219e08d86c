//! Statevector simulation of variational quantum circuits with residual
//! connections, plus the tooling around them: frequency spectra, training,
//! expressibility estimates and a small image-classification pipeline.

pub mod circuit;
pub mod dataio;
pub mod error;
pub mod experiments;
pub mod expressibility;
pub mod parallel;
pub mod qcnn;
pub mod residual;
pub mod simcore;
pub mod spectrum;
pub mod train;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
