//! Finite-difference check of every decoder parameter through the full
//! training loss (cross entropy + weight decay + localization term).
//!
//! cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use caltext::decoder::{CalDecoder, DecoderDims};
use caltext::tensor::gradcheck::{check_params, worst, DEFAULT_STEP};
use caltext::tensor::{ParamStore, Tensor};
use caltext::training::{sequence_loss, LocalizationMode, LossConfig};
use caltext::EOS;

fn main() -> caltext::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dims = DecoderDims { k: 5, m: 6, h: 7, n: 6, d: 8, f: 3, q: 4 };
    let mut store = ParamStore::new();
    let decoder = CalDecoder::new(dims, &mut store, &mut rng)?;
    // move off the zero-initialized coverage filter so every path carries signal
    for p in store.params_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    let grid = Tensor::from_fn(&[2, 4, 8], |_| rng.gen_range(-1.0..1.0));
    let target = [3, 1, EOS];

    for mode in [LocalizationMode::Literal, LocalizationMode::Surrogate] {
        let cfg = LossConfig { lambda: 0.01, gamma: 0.5, localization: mode, ..LossConfig::default() };
        let reports = check_params(&store, DEFAULT_STEP, |t, s| {
            sequence_loss(t, s, &decoder, t.constant(grid.clone()), &target, &cfg)
        })?;
        println!("localization {mode:?}");
        for r in &reports {
            println!("  {:<16} |grad| {:>10.4e}  rel err {:.2e}", r.name, r.analytic_norm, r.rel_error);
        }
        println!("  worst {:.2e}", worst(&reports));
    }
    Ok(())
}
