//! Overfits the toy model on the five-line synthetic fixture plus a blank line.
//!
//! cargo run --release --example train_synthetic -- [max_epochs]

use std::time::Instant;

use caltext::data::synthetic;
use caltext::training::{probe_cer, Sample, TrainConfig, Trainer};
use caltext::{Model, ModelConfig, Preset};

fn main() -> caltext::Result<()> {
    let max_epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let vocab = synthetic::vocabulary();
    let config = ModelConfig::preset(Preset::Toy, vocab.size());
    let mut model = Model::new(config, vocab.clone(), 7)?;

    let mut samples = Vec::new();
    for (i, text) in synthetic::fixture_texts().iter().enumerate() {
        let image = model.prepare_image(&synthetic::render_line(text)?)?;
        samples.push(Sample::new(format!("line{i}"), image, text.as_str(), &vocab)?);
    }
    let train = TrainConfig {
        batch_size: samples.len(),
        augmentation: None,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(train, &model, 7)?;
    let start = Instant::now();
    for epoch in 1..=max_epochs {
        let probe: &[Sample] = if epoch % 50 == 0 { &samples } else { &[] };
        let stats = trainer.train_epoch(&mut model, &samples, probe)?;
        if epoch % 50 == 0 {
            println!("{stats} ({:.1}s)", start.elapsed().as_secs_f64());
            if stats.probe_cer == 0.0 {
                break;
            }
        }
    }
    println!("final probe_cer {}", probe_cer(&model, &samples, 5)?);
    for s in &samples {
        let r = model.recognize(&s.image, 5)?;
        println!("{:>8}  target {:?}  output {:?}", s.id, s.text, r.text);
    }
    Ok(())
}
