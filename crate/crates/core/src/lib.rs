pub mod autodiff;
pub mod cli;
pub mod data;
pub mod experiment;
pub mod error;
pub mod forecaster;
pub mod fusion;
pub mod gradcheck;
pub mod graphs;
pub mod nn;

pub use error::{Error, Result};
