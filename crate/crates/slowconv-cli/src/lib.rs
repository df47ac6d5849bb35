//! Library surface of the `slowconv` binary: run configuration, pipeline
//! runners, the spot-check harness, and the artifact formats (certificate
//! CSV, plot table, text report). The binary is a thin wrapper over these
//! modules; the process-level tests reuse the parsers to validate emitted
//! artifacts.

pub mod config;
pub mod csvout;
pub mod pipelines;
pub mod plotdata;
pub mod report;
