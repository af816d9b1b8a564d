pub mod autodiff;
pub mod benchmark;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model_file;
pub mod nnet;
pub mod simulation;
pub mod structures;
pub mod training;

pub use error::{Error, Result};
