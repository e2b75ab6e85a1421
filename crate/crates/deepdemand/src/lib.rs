//! File formats, batch extraction and the `deepdemand` command line on top
//! of `deepdemand-core`.

pub mod artifacts;
pub mod checksum;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod store;
pub mod tables;

pub use error::{AppError, AppResult};
