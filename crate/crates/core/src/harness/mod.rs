//! Experiment drivers producing the reports behind the CLI.

pub mod complexity;
pub mod curvefit;
pub mod data;
pub mod incremental;
pub mod mono;
pub mod report;
pub mod sweep;
pub mod variance;
pub mod wavelet_cmp;

pub use report::Report;
