pub mod benchmark;
pub mod checks;
pub mod cli;
pub mod descriptor;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod registration;
pub mod rng;
pub mod spatial;
pub mod synth;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
