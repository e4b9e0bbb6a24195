//! Experiment driver around the solver core: configuration ingestion, the
//! invariant suite, the coupling-scale sweep, the zero-flux vanishing run,
//! constants estimation, residual diagnostics, and the file formats the
//! runs emit (plain-text field dumps and versioned CSVs).
//!
//! Identical configuration and seed give byte-identical outputs, whatever
//! the worker count.

pub mod config;
pub mod experiments;
pub mod formats;
pub mod report;
