//! Writes the synthetic fixture corpus (PNG lines, vocab.txt, manifest.tsv)
//! and a ready-to-use `caltext.conf` into a directory.
//!
//! cargo run --release --example make_corpus -- <dir> [extra_random_lines]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use caltext::data::synthetic;

fn main() -> caltext::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "synthetic".into()));
    let extra: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut texts = synthetic::fixture_texts();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    texts.extend((0..extra).map(|_| synthetic::random_text(&mut rng, 2, 6)));
    let manifest = synthetic::write_corpus(&dir, &texts, 1)?;
    let conf = "corpus = manifest.tsv\nvocab = vocab.txt\ncheckpoint = model.ckpt\nout = out\n\
                preset = toy\nepochs = 300\npatience = 1000\nbatch_size = 16\naugment = false\n\
                image = line000.png\n";
    let conf_path = dir.join("caltext.conf");
    std::fs::write(&conf_path, conf).map_err(|e| caltext::Error::io(&conf_path, e))?;
    println!("wrote {} lines to {}", texts.len(), manifest.display());
    println!("config: {}", conf_path.display());
    Ok(())
}
