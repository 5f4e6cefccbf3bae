pub mod basis;
pub mod cli;
pub mod csr;
pub mod error;
pub mod io;
pub mod liouvillian;
pub mod perturbation;
pub mod rmt;
pub mod spectral;

pub use error::{Error, Result};
