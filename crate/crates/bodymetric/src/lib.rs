//! File formats, report writers and the command-line front-end around
//! [`bodymetric_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod parallel;
pub mod report;

pub use error::{Error, Result};
