//! File formats, configuration and the command-line front end for
//! `tsgeo-core`.

pub mod bundle_io;
pub mod cli;
pub mod config;
pub mod csv_io;
mod error;
pub mod image_io;

pub use error::{BundleError, Error, Result};
