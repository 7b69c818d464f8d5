//! Command-line front end: TOML input formats, CSV/JSON artifacts, and the
//! per-mode drivers behind the `olpdg` binary.

pub mod artifacts;
pub mod format;
pub mod runner;
