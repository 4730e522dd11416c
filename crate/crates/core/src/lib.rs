pub mod attacks;
pub mod defense;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nnet;
pub mod numerics;
pub mod rng;
pub mod service;
pub mod store;
pub mod victim;
pub mod worldgen;

pub use error::{LabError, Result};
pub use numerics::{DenseMatrix, ProbVector};
