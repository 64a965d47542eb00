#![allow(dead_code)]

use std::time::{Duration, Instant};

use caltext::data::synthetic;
use caltext::tensor::Tensor;
use caltext::training::{probe_cer, Sample, TrainConfig, Trainer};
use caltext::{Model, ModelConfig, Preset};

pub const SEED: u64 = 7;

pub fn toy_model(seed: u64) -> Model {
    let vocab = synthetic::vocabulary();
    Model::new(ModelConfig::preset(Preset::Toy, vocab.size()), vocab, seed).unwrap()
}

/// The five fixture lines plus the blank line, prepared for `model`.
pub fn fixture_samples(model: &Model) -> Vec<Sample> {
    synthetic::fixture_texts()
        .iter()
        .enumerate()
        .map(|(i, text)| {
            let image = model.prepare_image(&synthetic::render_line(text).unwrap()).unwrap();
            Sample::new(format!("line{i}"), image, text.as_str(), &model.vocab).unwrap()
        })
        .collect()
}

pub fn white_image(h: usize, w: usize) -> Tensor {
    Tensor::full(&[h, w, 1], 1.0)
}

pub struct Overfit {
    pub model: Model,
    pub steps: usize,
    pub cer: f64,
    pub elapsed: Duration,
}

/// Full-batch training on the fixture until greedy CER reaches zero or the
/// step budget runs out.
pub fn overfit_fixture(seed: u64, max_steps: usize) -> Overfit {
    let start = Instant::now();
    let mut model = toy_model(seed);
    let samples = fixture_samples(&model);
    let config = TrainConfig {
        batch_size: samples.len(),
        augmentation: None,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, &model, seed).unwrap();
    let mut steps = 0;
    let mut cer = f64::NAN;
    while steps < max_steps {
        steps += trainer.train_epoch(&mut model, &samples, &[]).unwrap().steps;
        if steps % 10 == 0 {
            cer = probe_cer(&model, &samples, 1).unwrap();
            if cer == 0.0 {
                break;
            }
        }
    }
    Overfit { model, steps, cer, elapsed: start.elapsed() }
}
