//! Minibatch training loop.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::loss::{batch_loss, LossConfig};
use super::optim::OptimizerState;
use crate::data::SaltPepper;
use crate::error::{Error, Result};
use crate::metrics::levenshtein;
use crate::model::Model;
use crate::tensor::{Mode, ParamStore, Tape, Tensor};
use crate::vocab::Vocabulary;

/// A prepared training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Network-ready `[H, W, 1]` image.
    pub image: Tensor,
    pub text: String,
    /// Index sequence including the trailing end marker.
    pub target: Vec<usize>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor, text: impl Into<String>, vocab: &Vocabulary) -> Result<Self> {
        let text = text.into();
        let target = vocab.encode_text(&text)?;
        Ok(Sample {
            id: id.into(),
            image,
            text,
            target,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub batch_size: usize,
    pub augmentation: Option<SaltPepper>,
    pub shuffle: bool,
    pub probe_beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossConfig::default(),
            batch_size: 16,
            augmentation: Some(SaltPepper::default()),
            shuffle: true,
            probe_beam: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-sample objective over the epoch.
    pub mean_loss: f64,
    /// Corpus CER on the probe set; NaN when no probe was given.
    pub probe_cer: f64,
    pub steps: usize,
}

impl fmt::Display for EpochStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch {} loss {} probe_cer {}", self.epoch, self.mean_loss, self.probe_cer)
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: OptimizerState,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, model: &Model, seed: u64) -> Result<Self> {
        config.loss.validate()?;
        if config.batch_size == 0 || config.probe_beam == 0 {
            return Err(Error::Config("batch size and probe beam must be at least 1".into()));
        }
        Ok(Trainer {
            config,
            optimizer: OptimizerState::new(&model.store),
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Resumes the epoch counter, e.g. after loading a checkpoint.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    /// Position of the shuffle/augmentation/dropout stream, for exact resumption.
    pub fn rng_position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_rng_position(&mut self, position: u128) {
        self.rng.set_word_pos(position);
    }

    /// Forward, backward and one optimizer step on a batch; returns the batch objective.
    pub fn train_step(&mut self, model: &mut Model, batch: &[&Sample]) -> Result<f64> {
        self.train_step_with(model, batch, &mut |_| {})
    }

    /// As [`Trainer::train_step`], with `hook` run on the gradients before the update.
    pub fn train_step_with(
        &mut self,
        model: &mut Model,
        batch: &[&Sample],
        hook: &mut dyn FnMut(&mut ParamStore),
    ) -> Result<f64> {
        let images: Vec<Tensor> = batch
            .iter()
            .map(|s| match &self.config.augmentation {
                Some(sp) => sp.apply(&s.image, &mut self.rng),
                None => s.image.clone(),
            })
            .collect();
        let refs: Vec<&Tensor> = images.iter().collect();
        let targets: Vec<Vec<usize>> = batch.iter().map(|s| s.target.clone()).collect();

        let tape = Tape::new();
        let (grids, updates) = model.encode_batch(&tape, &refs, Mode::Train, &mut self.rng)?;
        let loss = batch_loss(&tape, &model.store, &model.decoder, &grids, &targets, &self.config.loss)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite batch loss {value}")));
        }
        model.store.zero_grads();
        tape.backward(loss, &mut model.store)?;
        hook(&mut model.store);
        self.optimizer.step(&mut model.store, &self.config.loss)?;
        model.encoder.apply_norm_updates(&mut model.store, &updates);
        Ok(value)
    }

    pub fn train_epoch(&mut self, model: &mut Model, data: &[Sample], probe: &[Sample]) -> Result<EpochStats> {
        self.train_epoch_with(model, data, probe, &mut |_| {})
    }

    pub fn train_epoch_with(
        &mut self,
        model: &mut Model,
        data: &[Sample],
        probe: &[Sample],
        hook: &mut dyn FnMut(&mut ParamStore),
    ) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        if self.config.shuffle {
            order.shuffle(&mut self.rng);
        }
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            total += self.train_step_with(model, &batch, hook)? * batch.len() as f64;
            steps += 1;
        }
        self.epoch += 1;
        let probe_cer = if probe.is_empty() {
            f64::NAN
        } else {
            probe_cer(model, probe, self.config.probe_beam)?
        };
        let stats = EpochStats {
            epoch: self.epoch,
            mean_loss: total / data.len() as f64,
            probe_cer,
            steps,
        };
        log::info!("{stats}");
        Ok(stats)
    }
}

/// Corpus CER in percent: total edits over total target characters.
/// Output on a blank target counts as insertions. NaN if every target is blank.
pub fn probe_cer(model: &Model, samples: &[Sample], beam_width: usize) -> Result<f64> {
    let outputs: Vec<String> = samples
        .par_iter()
        .map(|s| model.recognize(&s.image, beam_width).map(|r| r.text))
        .collect::<Result<_>>()?;
    let mut edits = 0;
    let mut chars = 0;
    for (s, out) in samples.iter().zip(&outputs) {
        let t: Vec<char> = s.text.chars().collect();
        let o: Vec<char> = out.chars().collect();
        edits += levenshtein(&t, &o).total();
        chars += t.len();
    }
    Ok(if chars == 0 {
        f64::NAN
    } else {
        edits as f64 / chars as f64 * 100.0
    })
}
