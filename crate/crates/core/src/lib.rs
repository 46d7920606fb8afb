//! Lane-level positioning from inertial event streams.
//!
//! A discrete Bayesian lane filter consumes lane-change events and lane
//! anchor observations detected from car-frame sensor traces. Anchor lane
//! distributions are learned from crowds of traces by two-level density
//! clustering, and a simulator produces drives with ground-truth lanes.

pub mod anchor;
pub mod config;
pub mod error;
pub mod detect;
pub mod eval;
pub mod events;
pub mod filter;
pub mod geo;
pub mod learn;
pub mod pipeline;
pub mod preprocess;
pub mod presets;
pub mod repo;
pub mod sim;
pub mod trace;

pub use error::{Error, Result};
