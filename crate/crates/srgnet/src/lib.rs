//! File formats, configuration files and the command-line front end for
//! [`srgnet_core`].

pub mod cli;
pub mod config_file;
mod error;
pub mod io;
pub mod model_file;
pub mod report;

pub use error::{Error, Result};
