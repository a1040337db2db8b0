//! Online convex optimization in dynamic environments.
//!
//! The crate provides mirror descent forecasters that follow a dynamical
//! model between rounds, fixed-share aggregation over a family of candidate
//! models, parametric additive dynamics for exponential families, and
//! seeded simulators for three tracking problems.

pub mod config;
pub mod dmd;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod experts;
pub mod expfam;
pub mod geometry;
pub mod loss;
pub mod rng;
pub mod simulators;
pub mod trace;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::Vector;
