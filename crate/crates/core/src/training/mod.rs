//! Objective, optimizer and training loop.

pub mod loss;
pub mod optim;
pub mod trainer;

pub use loss::{batch_loss, localization_penalty, pad_targets, regularizer, sequence_loss, LocalizationMode, LossConfig, PROB_FLOOR};
pub use optim::{adadelta_step, OptimizerState, StepReport};
pub use trainer::{probe_cer, EpochStats, Sample, TrainConfig, Trainer};

#[cfg(test)]
mod tests;
