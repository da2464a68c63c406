//! RF transmitter identification from raw I/Q captures.

pub mod ann;
pub mod dataprep;
pub mod error;
pub mod frontend;
pub mod harness;
pub mod mst;
pub mod seed;
pub mod signal;
pub mod wavelet;

pub use error::{Error, Result};
