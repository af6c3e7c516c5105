pub mod config;
pub mod data;
pub mod diffcore;
pub mod episodes;
pub mod error;
pub mod experiment;
pub mod extractor;
pub mod generator;
pub mod layers;
pub mod metaclassifier;
pub mod rng;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
