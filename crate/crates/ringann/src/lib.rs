//! File formats, multi-threaded drivers and the command line for
//! [`ringann_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod index_file;
pub mod parallel;
pub mod report;
pub mod ring;
pub mod vecio;

pub use error::{Error, Result};
