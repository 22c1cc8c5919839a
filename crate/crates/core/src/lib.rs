//! Weighted Sobolev spaces on singular measures: discretisation, fiber
//! bundles of admissible gradient directions, and the derived calculus.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cantor;
pub mod config;
pub mod discretization;
pub mod eigen;
pub mod error;
pub mod expr;
pub mod fibers;
pub mod harness;
pub mod geometry;
pub mod measure;
pub mod sobolev;
pub mod sparse;
pub mod subspace;

pub use error::{Error, Result};
