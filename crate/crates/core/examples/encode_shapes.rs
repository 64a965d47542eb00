//! Annotation-grid extents produced by the encoder for a few input sizes.
//!
//! cargo run --release --example encode_shapes

use caltext::encoder::EncoderConfig;
use caltext::tensor::Tensor;
use caltext::{Model, ModelConfig, Preset};

fn main() -> caltext::Result<()> {
    let full = EncoderConfig::full();
    println!("full encoder: depth {}", full.output_channels());
    for (h, w) in [(100, 800), (64, 400), (8, 8)] {
        let (gh, gw) = full.grid_extents(h, w);
        println!("  {h}x{w} -> {gh}x{gw}x{}", full.output_channels());
    }

    let vocab = caltext::data::synthetic::vocabulary();
    let model = Model::new(ModelConfig::preset(Preset::Toy, vocab.size()), vocab, 0)?;
    // a narrow line is padded to twice its width before resizing
    for (h, w) in [(32, 128), (40, 500), (20, 90)] {
        let raw = Tensor::full(&[h, w, 1], 1.0);
        let prepared = model.prepare_image(&raw)?;
        let grid = model.annotate(&prepared)?;
        println!(
            "toy: raw {h}x{w} -> input {:?} -> grid {}x{}x{}",
            prepared.shape(),
            grid.h,
            grid.w,
            grid.d
        );
    }
    Ok(())
}
