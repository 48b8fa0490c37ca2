//! Simulation toolkit for the Brownian loop soup at intensity one half on
//! finite metric graphs: discrete loop soups, occupation fields, random
//! currents, the measure conditioned on vanishing local times, and
//! statistical checks comparing independent constructions.

pub mod conditioning;
pub mod currents;
pub mod dist;
pub mod error;
pub mod gff;
pub mod graph;
pub mod harmonic;
pub mod loops;
pub mod occupation;
pub mod rebuild;
pub mod one_dim;
pub mod report;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
pub use graph::{EdgeId, MetricGraph, Step, VertexId};
