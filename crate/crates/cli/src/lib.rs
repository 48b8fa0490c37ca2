//! Command-line harness for the loopsoup library: experiment configuration,
//! report files and sample dumps.

pub mod experiments;
pub mod graphs;
pub mod sample;

pub use experiments::{run, run_and_write, Experiment, ExperimentConfig};
