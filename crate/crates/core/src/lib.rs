//! Representation-similarity and class-information analysis of vision
//! transformer activations, prediction ranks and parameter trajectories.

pub mod cli;
pub mod consistency;
pub mod container;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod probes;
pub mod report;
pub mod similarity;
pub mod synth;

pub use error::{Error, Result};
