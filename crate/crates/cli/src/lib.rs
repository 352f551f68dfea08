//! Command-line front end for `relalloc`: configuration parsing, output
//! rendering and subcommands.

pub mod commands;
pub mod config;
pub mod output;
