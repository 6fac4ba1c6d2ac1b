//! Experiment pipeline behind the `bpgnn` binary: configuration, on-disk
//! artifacts and one function per command.

pub mod artifacts;
pub mod commands;
pub mod config;
