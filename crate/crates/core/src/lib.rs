//! WDformer: a wavelet-embedded, differential-attention, encoder-only
//! transformer for multivariate time-series forecasting, with a
//! deterministic training/evaluation pipeline and a self-verification suite.

pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
mod rngutil;
pub mod training;
pub mod wavelet;

pub use error::{Error, Result};
pub use numerics::Tensor;
