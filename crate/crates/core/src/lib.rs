//! Shape-dependent functional dictionaries on point clouds.
//!
//! A per-point network predicts, for every shape, a thin matrix whose columns
//! (atoms) span the semantic probe functions observed on that shape. Training
//! alternates an exact inner least-squares solve for the combination weights
//! with a gradient step on the network at fixed weights.

#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod io;
pub mod loss;
pub mod model;
pub mod numerics;
pub mod solver;

pub use error::{Error, Result};
