//! Library surface of the command-line tool, split out so integration
//! tests can drive configuration loading and the command implementations
//! directly.

pub mod commands;
pub mod config;
