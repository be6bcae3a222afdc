//! Support library of the `deed` binary: PGM image I/O and run
//! configuration (key=value files merged with command-line flags).

pub mod config;
pub mod pgm;
