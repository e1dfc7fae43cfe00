//! File formats, reports and the command-line front end for [`halfv_core`].
//!
//! - [`trace_io`]: the HVTD binary trace format.
//! - [`config`]: JSON run configurations.
//! - [`report`]: CSV reports with a provenance header.
//! - [`cli`]: the `halfv` subcommands and their exit codes.

#![forbid(unsafe_code)]

pub mod cli;
pub mod config;
pub mod error;
pub mod report;
pub mod trace_io;

pub use error::{Error, Result};
