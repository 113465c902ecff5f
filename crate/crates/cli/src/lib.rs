//! Configuration, result documents and command implementations behind the
//! `softmorph` binary.

pub mod commands;
pub mod config;
pub mod output;
