pub mod cli;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
mod init;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;
pub mod vocab;
pub mod viz;

pub use error::{CheckpointError, Error, Result};
pub use model::{Model, ModelConfig, Preset, Recognition};
pub use vocab::{Vocabulary, EOS};
