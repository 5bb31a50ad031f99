//! Benchmark harness for the security-game learning toolkit: experiment
//! sweeps with CSV/manifest output, and executable theory verification.

pub mod experiment;
pub mod spec;
pub mod theory_checks;
