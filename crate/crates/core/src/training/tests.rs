use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::decoder::{CalDecoder, DecoderDims};
use crate::tensor::gradcheck::{check_params, worst, DEFAULT_STEP};
use crate::tensor::{LayerKind, ParamStore, Tape, Tensor};
use crate::vocab::EOS;

fn dims(k: usize) -> DecoderDims {
    DecoderDims { k, m: 8, h: 8, n: 8, d: 8, f: 3, q: 4 }
}

fn random_decoder(k: usize, seed: u64) -> (CalDecoder, ParamStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let dec = CalDecoder::new(dims(k), &mut store, &mut rng).unwrap();
    for p in store.params_mut() {
        for v in p.value.data_mut() {
            *v = rng.gen_range(-0.8..0.8);
        }
    }
    (dec, store)
}

fn grid(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[2, 3, 8], |_| rng.gen_range(-1.0..1.0))
}

fn no_extras() -> LossConfig {
    LossConfig { lambda: 0.0, gamma: 0.0, ..LossConfig::default() }
}

fn loss_value(dec: &CalDecoder, store: &ParamStore, g: &Tensor, target: &[usize], cfg: &LossConfig) -> f64 {
    let tape = Tape::new();
    let l = sequence_loss(&tape, store, dec, tape.constant(g.clone()), target, cfg).unwrap();
    tape.scalar(l)
}

#[test]
fn literal_penalty_is_constant_with_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t_steps in 1..6 {
        let tape = Tape::new();
        let logits: Vec<_> = (0..t_steps)
            .map(|_| tape.leaf(Tensor::from_fn(&[6], |_| rng.gen_range(-3.0..3.0))))
            .collect();
        let alphas: Vec<_> = logits.iter().map(|&z| tape.softmax(z)).collect();
        let p = localization_penalty(&tape, &alphas, LocalizationMode::Literal).unwrap();
        assert_eq!(tape.scalar(p), t_steps as f64);
        // the closed form agrees with summing |α| directly
        let direct: f64 = alphas.iter().map(|&a| tape.data(a).iter().map(|v| v.abs()).sum::<f64>()).sum();
        assert!((direct - t_steps as f64).abs() < 1e-12);
        tape.backward(p, &mut ParamStore::new()).unwrap();
        for z in logits {
            let g = tape.grad(z).unwrap_or_else(|| Tensor::zeros(&[6]));
            assert!(g.data().iter().all(|v| v.abs() < 1e-12), "{g:?}");
        }
    }
}

#[test]
fn surrogate_penalty_examples() {
    let tape = Tape::new();
    let one_hot = tape.constant(Tensor::new(&[4], vec![0.0, 1.0, 0.0, 0.0]).unwrap());
    let uniform = tape.constant(Tensor::full(&[4], 0.25));
    let mode = LocalizationMode::Surrogate;
    assert_eq!(tape.scalar(localization_penalty(&tape, &[one_hot], mode).unwrap()), 0.0);
    assert_eq!(tape.scalar(localization_penalty(&tape, &[uniform], mode).unwrap()), 0.75);
    assert_eq!(tape.scalar(localization_penalty(&tape, &[one_hot, uniform], mode).unwrap()), 0.75);
}

#[test]
fn confident_model_has_zero_loss() {
    let (dec, mut store) = random_decoder(4, 2);
    for p in store.params_mut() {
        p.value.data_mut().fill(0.0);
    }
    store.assign("decoder.embedding", Tensor::from_fn(&[8, 4], |i| if i == 0 { 1.0 } else { 0.0 })).unwrap();
    store.assign("decoder.out.w_y", Tensor::from_fn(&[8, 8], |i| if i % 9 == 0 { 1.0 } else { 0.0 })).unwrap();
    store.assign("decoder.out.w_o", Tensor::from_fn(&[4, 8], |i| if i == 0 { 1000.0 } else { 0.0 })).unwrap();
    assert_eq!(loss_value(&dec, &store, &grid(3), &[EOS], &no_extras()), 0.0);
}

#[test]
fn uniform_model_costs_log_k_per_character() {
    let (dec, mut store) = random_decoder(130, 4);
    for p in store.params_mut() {
        p.value.data_mut().fill(0.0);
    }
    let loss = loss_value(&dec, &store, &grid(5), &[EOS], &no_extras());
    assert!((loss - 130f64.ln()).abs() < 1e-12);
    assert!((loss - 4.8675).abs() < 1e-4);
    let lambda = LossConfig { lambda: 1.0, gamma: 0.0, ..LossConfig::default() };
    assert_eq!(loss_value(&dec, &store, &grid(5), &[EOS], &lambda), loss);
}

#[test]
fn regularizer_ignores_convolutional_parameters() {
    let (_, mut store) = random_decoder(4, 6);
    let reg = |s: &ParamStore| {
        let tape = Tape::new();
        tape.scalar(regularizer(&tape, s).unwrap())
    };
    let mut expected = 0.0;
    for p in store.params() {
        if p.kind == LayerKind::NonConvolutional {
            expected += p.value.data().iter().map(|v| v * v).sum::<f64>();
        }
    }
    let before = reg(&store);
    assert!((before - expected).abs() < 1e-12);
    store.assign("decoder.attn.coverage", Tensor::full(&[3, 3, 1, 4], 7.0)).unwrap();
    assert_eq!(reg(&store), before);
}

#[test]
fn loss_is_nonnegative_and_rejects_bad_targets() {
    for seed in 0..10 {
        let (dec, store) = random_decoder(4, 10 + seed);
        for mode in [LocalizationMode::Literal, LocalizationMode::Surrogate] {
            let cfg = LossConfig { localization: mode, ..LossConfig::default() };
            assert!(loss_value(&dec, &store, &grid(seed), &[2, 1, EOS], &cfg) >= 0.0);
        }
    }
    let (dec, store) = random_decoder(4, 20);
    let tape = Tape::new();
    let g = tape.constant(grid(0));
    assert!(sequence_loss(&tape, &store, &dec, g, &[], &LossConfig::default()).is_err());
    assert!(sequence_loss(&tape, &store, &dec, g, &[1, 2], &LossConfig::default()).is_err());
}

#[test]
fn masked_batch_equals_mean_of_individual_losses() {
    let (dec, store) = random_decoder(4, 21);
    let targets = vec![vec![1, 2, 3, EOS], vec![EOS], vec![3, EOS]];
    let grids: Vec<Tensor> = (0..3).map(|i| grid(30 + i)).collect();
    for mode in [LocalizationMode::Literal, LocalizationMode::Surrogate] {
        let cfg = LossConfig { localization: mode, lambda: 1e-2, ..LossConfig::default() };
        let tape = Tape::new();
        let vars: Vec<_> = grids.iter().map(|g| tape.constant(g.clone())).collect();
        let batch = tape.scalar(batch_loss(&tape, &store, &dec, &vars, &targets, &cfg).unwrap());
        let mean = grids
            .iter()
            .zip(&targets)
            .map(|(g, t)| loss_value(&dec, &store, g, t, &cfg))
            .sum::<f64>()
            / 3.0;
        assert!((batch - mean).abs() < 1e-8, "{batch} vs {mean}");
    }
    let (padded, masks) = pad_targets(&targets);
    assert_eq!(padded[1], vec![EOS; 4]);
    assert_eq!(masks[2], vec![true, true, false, false]);
}

#[test]
fn sequence_loss_gradients_match_finite_differences() {
    let (dec, store) = random_decoder(4, 22);
    let g = grid(40);
    for mode in [LocalizationMode::Literal, LocalizationMode::Surrogate] {
        let cfg = LossConfig { localization: mode, lambda: 0.05, gamma: 0.5, ..LossConfig::default() };
        let reports = check_params(&store, DEFAULT_STEP, |t, s| {
            sequence_loss(t, s, &dec, t.constant(g.clone()), &[2, EOS], &cfg)
        })
        .unwrap();
        assert!(worst(&reports) < 1e-4, "{reports:?}");
    }
}

fn quadratic_store(seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store
        .add("x", Tensor::from_fn(&[10], |_| rng.gen_range(-0.1..0.1)), LayerKind::NonConvolutional)
        .unwrap();
    store
}

fn set_quadratic_grad(store: &mut ParamStore) -> f64 {
    let p = &mut store.params_mut()[0];
    let x = p.value.data().to_vec();
    for (g, v) in p.grad.data_mut().iter_mut().zip(&x) {
        *g = 2.0 * v;
    }
    x.iter().map(|v| v * v).sum()
}

#[test]
fn adadelta_minimizes_a_quadratic() {
    let mut store = quadratic_store(7);
    let mut opt = OptimizerState::new(&store);
    let cfg = LossConfig::default();
    let initial = set_quadratic_grad(&mut store);
    let mut last = initial;
    opt.step(&mut store, &cfg).unwrap();
    for _ in 1..100 {
        let f = set_quadratic_grad(&mut store);
        assert!(f < last, "{f} >= {last}");
        last = f;
        opt.step(&mut store, &cfg).unwrap();
    }
    let f = set_quadratic_grad(&mut store);
    assert!(f < last && f < 0.01 * initial, "{f} vs {initial}");
}

#[test]
fn zero_gradient_only_decays_accumulators() {
    let mut store = quadratic_store(8);
    let mut opt = OptimizerState::new(&store);
    let cfg = LossConfig::default();
    set_quadratic_grad(&mut store);
    opt.step(&mut store, &cfg).unwrap();
    let (eg, ed) = (opt.acc_grad(0).clone(), opt.acc_update(0).clone());
    let before = store.params()[0].value.clone();
    store.zero_grads();
    opt.step(&mut store, &cfg).unwrap();
    assert_eq!(store.params()[0].value, before);
    for (a, b) in opt.acc_grad(0).data().iter().zip(eg.data()) {
        assert_eq!(*a, cfg.rho * b);
    }
    for (a, b) in opt.acc_update(0).data().iter().zip(ed.data()) {
        assert_eq!(*a, cfg.rho * b);
    }
}

#[test]
fn clipping_rescales_to_threshold() {
    let mut store = quadratic_store(9);
    let cfg = LossConfig { clip_threshold: 3.0, ..LossConfig::default() };
    let g: Vec<f64> = (1..=10).map(|i| i as f64).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scaled: Vec<f64> = g.iter().map(|v| v * 6.0 / norm).collect();
    store.params_mut()[0].grad.data_mut().copy_from_slice(&scaled);
    let mut opt = OptimizerState::new(&store);
    let report = opt.step(&mut store, &cfg).unwrap();
    assert!((report.grad_norm - 6.0).abs() < 1e-9);
    assert!((report.applied_norm - 3.0).abs() < 1e-9);
    // the accumulator saw (1 − ρ)·g² of the clipped gradient
    let seen: f64 = opt.acc_grad(0).data().iter().sum::<f64>() / (1.0 - cfg.rho);
    assert!((seen.sqrt() - 3.0).abs() < 1e-9);
}

#[test]
fn nan_gradient_aborts_and_names_parameter() {
    let mut store = quadratic_store(10);
    store.params_mut()[0].grad.data_mut()[3] = f64::NAN;
    let before = store.params()[0].value.clone();
    let mut opt = OptimizerState::new(&store);
    let err = opt.step(&mut store, &LossConfig::default()).unwrap_err();
    assert!(matches!(&err, crate::Error::NanGradient(name) if name == "x"), "{err}");
    assert_eq!(store.params()[0].value, before);
    assert_eq!(opt.steps, 0);
}

#[test]
fn optimizer_state_round_trips_through_records() {
    let mut store = quadratic_store(11);
    let mut opt = OptimizerState::new(&store);
    set_quadratic_grad(&mut store);
    opt.step(&mut store, &LossConfig::default()).unwrap();
    let back = OptimizerState::from_arrays(&store, &opt.to_arrays(&store)).unwrap();
    assert_eq!(back, opt);
    assert!(OptimizerState::from_arrays(&store, &[]).is_err());
}

#[test]
fn config_validation() {
    assert!(LossConfig::default().validate().is_ok());
    assert!(LossConfig { lambda: -1.0, ..LossConfig::default() }.validate().is_err());
    assert!(LossConfig { clip_threshold: 0.0, ..LossConfig::default() }.validate().is_err());
    assert_eq!("surrogate".parse::<LocalizationMode>().unwrap(), LocalizationMode::Surrogate);
    assert!("l2".parse::<LocalizationMode>().is_err());
}
