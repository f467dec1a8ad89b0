//! Dense, behavior-diverse traffic scenario synthesis on lane-level maps.
//!
//! The pipeline runs bottom-up through the modules below: a [`map_model`] is
//! discretized into cells by [`gridify`], generated agents move cell to cell
//! under [`policy`] inside the [`engine`] tick loop, their discrete paths are
//! turned into continuous trajectories by [`frenet_smooth`], and the result is
//! audited with [`metrics`]. [`scenario`], [`config`] and [`cli_io`] cover the
//! file formats and the command-line surface.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_io;
pub mod config;
pub mod engine;
pub mod error;
pub mod frenet_smooth;
pub mod geom;
pub mod gridify;
pub mod map_model;
pub mod metrics;
pub mod policy;
pub mod scenario;

pub use error::{Error, Result};
