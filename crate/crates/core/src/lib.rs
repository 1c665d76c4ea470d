//! Langevin dynamics of the uniformly convex gradient interface model and
//! the numerical homogenization toolkit built around it.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod homogenize;
pub mod lattice;
pub mod noise;
pub mod norms;
pub mod occupation;
pub mod parabolic;
pub mod potential;
pub mod quadrature;
pub mod stats;

pub use error::{Error, Result};
