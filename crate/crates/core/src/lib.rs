//! Edge-level traffic demand estimation.
//!
//! The pipeline extracts competing origin and destination territories
//! around each target road edge, keeps the OD pairs whose fastest route
//! uses the edge, and fits a small differentiable model that turns area
//! features and route times into an edge volume.
//!
//! The crate is `no_std` with `alloc`; file formats, batch execution and
//! the command line live in the `deepdemand` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod interpret;
pub mod model;
pub mod numeric;
pub mod od;
pub mod synth;

pub use error::{Error, Result};
