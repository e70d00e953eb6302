//! Component-space explanations for multimodal wearable time-series
//! classifiers.
//!
//! Signals are split by an invertible decomposition into named,
//! domain-meaningful components. A trained classifier is then queried on
//! weighted reconstructions, and a per-component weight vector is optimized
//! to drop every component the prediction does not depend on.

pub mod baselines;
pub mod decomp;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod iic;
pub mod nn;
pub mod report;
pub mod signal;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
