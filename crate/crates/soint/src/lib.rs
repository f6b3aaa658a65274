//! Desk-scale tooling around `soint-core`: text file formats, a parallel
//! benchmark runner with JSON/CSV reports, and the `soint` command line.

pub mod bench;
pub mod cli;
pub mod format;
