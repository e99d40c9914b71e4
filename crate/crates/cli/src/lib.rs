//! Library half of the `salt` command: file formats and subcommand bodies.

pub mod commands;
pub mod error;
pub mod io;
pub mod model_file;
