//! Greedy decoding against beam search of growing width on one toy model.
//!
//! cargo run --release --example beam_search

use caltext::data::synthetic;
use caltext::decoder::{beam_search, greedy_decode, CalStepper};
use caltext::{Model, ModelConfig, Preset};

fn main() -> caltext::Result<()> {
    let vocab = synthetic::vocabulary();
    let config = ModelConfig::preset(Preset::Toy, vocab.size());
    let max_len = config.max_len;
    let model = Model::new(config, vocab, 3)?;
    let image = model.prepare_image(&synthetic::render_line("جدر سع")?)?;
    let grid = model.annotate(&image)?;
    let stepper = CalStepper::new(&model.decoder, &model.store, &grid)?;

    let greedy = greedy_decode(&stepper, max_len)?;
    println!("greedy   log p {:>9.4}  {:?}", greedy.log_prob, model.vocab.decode_indices(greedy.characters())?);
    for width in [1, 2, 5, 10] {
        let hyp = beam_search(&stepper, width, max_len)?;
        println!(
            "beam {width:<3} log p {:>9.4}  {:?}",
            hyp.log_prob,
            model.vocab.decode_indices(hyp.characters())?
        );
    }
    Ok(())
}
