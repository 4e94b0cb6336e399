//! Massive-MIMO symbol detection: classical and learned detectors, channel
//! generators, training, diagnostics and a Monte-Carlo harness.

pub mod channel;
pub mod constellation;
pub mod denoiser;
pub mod detectors;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod models;
pub mod numerics;
pub mod trainer;

pub use constellation::{Constellation, SymbolVector};
pub use error::{Error, Result};
pub use numerics::{CMat, C64};
