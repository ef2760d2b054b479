//! Noise tailoring on an exact density-matrix emulator.

pub mod analysis;
pub mod bcs;
pub mod channels;
pub mod circuit;
pub mod compiling;
pub mod error;
pub mod experiment;
pub mod mitigation;
pub mod pauli;
pub mod rng;
pub mod simulator;
pub mod tomography;

pub use error::{NtError, Result};
