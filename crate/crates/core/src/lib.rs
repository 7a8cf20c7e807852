pub mod autodiff;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
