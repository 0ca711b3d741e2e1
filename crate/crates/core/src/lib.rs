//! RNN-T training on partially transcribed audio streams.
//!
//! The encoder may consume the whole utterance while the loss is evaluated
//! only on transcribed segments (`TrainMode::FullUtterance`), or it may see
//! each transcribed segment in isolation (`TrainMode::Segmented`).

pub mod dataset;
pub mod decode;
pub mod error;
pub mod features;
pub mod loss;
pub mod model;
pub mod saliency;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
