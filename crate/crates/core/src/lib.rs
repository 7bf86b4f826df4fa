//! Estimation of vector-valued RF power maps from compressed, quantized
//! sensor measurements.

pub mod batch;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod kernels;
pub mod model;
pub mod online;
pub mod qp;
pub mod quantize;
pub mod simulate;

pub use error::{Error, Result};
