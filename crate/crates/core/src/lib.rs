//! Question generation with a question-type predictor, a copy-augmented
//! attention decoder and a small reverse-mode autodiff engine.

pub mod corpus;
pub mod decode;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numgrad;
pub mod synth;
pub mod training;
pub mod typepred;

pub use error::{Error, Result};
