//! Renders the spatiotemporal attention overlay for one synthetic line.
//! Pass a checkpoint to use trained weights; otherwise a fresh toy model is used.
//!
//! cargo run --release --example visualize_attention -- [checkpoint] [out_dir]

use std::path::PathBuf;

use caltext::data::{synthetic, write_png, write_pnm, Checkpoint};
use caltext::viz::{colorize_attention, overlay, step_frames, ColorVector};
use caltext::{Model, ModelConfig, Preset};

fn main() -> caltext::Result<()> {
    let mut args = std::env::args().skip(1);
    let model = match args.next() {
        Some(path) => Checkpoint::load(path)?.to_model()?,
        None => {
            let vocab = synthetic::vocabulary();
            Model::new(ModelConfig::preset(Preset::Toy, vocab.size()), vocab, 7)?
        }
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "viz_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| caltext::Error::io(&out, e))?;

    let image = model.prepare_image(&synthetic::render_line("تفرم ا")?)?;
    let r = model.recognize(&image, 5)?;
    println!("output {:?} over {} steps", r.text, r.alphas.len());

    let colored = colorize_attention(&r.alphas, ColorVector::YELLOW, ColorVector::GREEN)?;
    let raster = overlay(&image, &colored, 0.6)?;
    write_pnm(out.join("attention.ppm"), &raster)?;
    write_png(out.join("attention.png"), &raster)?;
    for (t, frame) in step_frames(&image, &r.alphas, 0.6)?.iter().enumerate() {
        write_png(out.join(format!("step{:03}.png", t + 1)), frame)?;
    }
    println!("wrote overlay and {} frames to {}", r.alphas.len(), out.display());
    Ok(())
}
