//! Gradient-aided photometric stereo: synthetic data, a least-squares
//! baseline, a dual-branch normal estimation network, and the training and
//! evaluation harness around them.

pub mod ablation;
pub(crate) mod autodiff;
pub mod baseline;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod evaluate;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod prep;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
