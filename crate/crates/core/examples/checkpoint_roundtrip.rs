//! Saves a model with optimizer state, reloads it, and confirms the reloaded
//! model recognizes bit-identically.
//!
//! cargo run --release --example checkpoint_roundtrip

use caltext::data::{synthetic, Checkpoint};
use caltext::training::{Sample, TrainConfig, Trainer};
use caltext::{Model, ModelConfig, Preset};

fn main() -> caltext::Result<()> {
    let vocab = synthetic::vocabulary();
    let mut model = Model::new(ModelConfig::preset(Preset::Toy, vocab.size()), vocab.clone(), 1)?;
    let text = "فما";
    let image = model.prepare_image(&synthetic::render_line(text)?)?;
    let sample = Sample::new("fma", image.clone(), text, &vocab)?;
    let mut trainer = Trainer::new(TrainConfig { augmentation: None, ..TrainConfig::default() }, &model, 1)?;
    for _ in 0..3 {
        trainer.train_step(&mut model, &[&sample])?;
    }

    let mut ck = Checkpoint::from_model(&model);
    ck.optimizer = Some(trainer.optimizer.to_arrays(&model.store));
    let dir = std::env::temp_dir().join("caltext_roundtrip");
    std::fs::create_dir_all(&dir).map_err(|e| caltext::Error::io(&dir, e))?;
    let path = dir.join("model.ckpt");
    ck.save(&path)?;
    let bytes = std::fs::metadata(&path).map_err(|e| caltext::Error::io(&path, e))?.len();

    let reloaded = Checkpoint::load(&path)?.to_model()?;
    let a = model.recognize(&image, 3)?;
    let b = reloaded.recognize(&image, 3)?;
    println!("{} ({bytes} bytes, {} arrays)", path.display(), ck.arrays.len());
    println!("original  {:?} log p {}", a.text, a.log_prob);
    println!("reloaded  {:?} log p {}", b.text, b.log_prob);
    println!("bit-identical: {}", a.log_prob.to_bits() == b.log_prob.to_bits() && a.indices == b.indices);
    Ok(())
}
