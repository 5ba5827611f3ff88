//! Experiment drivers for the `polopt` binary.

pub mod config;
pub mod demo;
pub mod field;
pub mod gap;
pub mod output;
pub mod svg;
pub mod verify;
