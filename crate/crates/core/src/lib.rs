//! Simulation-based upper bounds on the Type I Error of adaptive trial
//! designs.
//!
//! A design is simulated at the centre of every tile of a gridded null
//! region. Each tile gets a bound made of three parts: a Clopper–Pearson
//! bound on the simulated error rate, a Cantelli bound on the linear Taylor
//! term over the tile's corners, and a deterministic bound on the quadratic
//! remainder from the family's covariance. The stitched result is a
//! [`bounds::BoundSurface`] holding pointwise with confidence 1 − δ.

pub mod bounds;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod designs;
pub mod domain;
pub mod engine;
pub mod error;
pub mod expfam;
pub mod special;
pub mod stream;
pub mod surface_io;

pub use error::{Error, Result};
