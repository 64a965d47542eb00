use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_inputs, check_params, worst, DEFAULT_STEP};
use super::*;

const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn conv_one_by_one_kernel_scales() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let k = tape.constant(Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap());
    let y = tape.conv2d(x, k, (1, 1), Padding::Same).unwrap();
    assert_eq!(tape.shape(y), vec![2, 2, 1]);
    assert_eq!(tape.data(y), vec![2.0, 4.0, 6.0, 8.0]);
}

#[test]
fn conv_valid_sums_window() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::full(&[3, 3, 1], 1.0));
    let k = tape.constant(Tensor::full(&[3, 3, 1, 1], 1.0));
    let y = tape.conv2d(x, k, (1, 1), Padding::Valid).unwrap();
    assert_eq!(tape.shape(y), vec![1, 1, 1]);
    assert_eq!(tape.data(y), vec![9.0]);
}

#[test]
fn conv_same_padding_and_stride_extents() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[7, 10, 2]));
    let k = tape.constant(Tensor::zeros(&[3, 3, 2, 5]));
    let y = tape.conv2d(x, k, (2, 2), Padding::Same).unwrap();
    assert_eq!(tape.shape(y), vec![4, 5, 5]);
    let y = tape.conv2d(x, k, (2, 3), Padding::Valid).unwrap();
    assert_eq!(tape.shape(y), vec![3, 3, 5]);
}

#[test]
fn conv_rejects_channel_mismatch() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[4, 4, 3]));
    let k = tape.constant(Tensor::zeros(&[3, 3, 2, 1]));
    let err = tape.conv2d(x, k, (1, 1), Padding::Same).unwrap_err().to_string();
    assert!(err.contains("[4, 4, 3]") && err.contains("[3, 3, 2, 1]"), "{err}");
}

#[test]
fn conv_rejects_kernel_larger_than_valid_input() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 2, 1]));
    let k = tape.constant(Tensor::zeros(&[3, 3, 1, 1]));
    assert!(tape.conv2d(x, k, (1, 1), Padding::Valid).is_err());
}

#[test]
fn conv_gradient_matches_finite_differences() {
    let mut r = rng(1);
    let inputs = [random(&[5, 5, 2], &mut r), random(&[3, 3, 2, 3], &mut r)];
    for (stride, padding) in [((1, 1), Padding::Same), ((2, 2), Padding::Same), ((2, 1), Padding::Valid)] {
        let reports = check_inputs(&inputs, DEFAULT_STEP, |t, v| {
            let y = t.conv2d(v[0], v[1], stride, padding)?;
            // weight the outputs so the gradient is not uniform
            let sq = t.square(y);
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(worst(&reports) < TOL, "{reports:?}");
    }
}

#[test]
fn batched_conv_matches_per_sample_conv() {
    let mut r = rng(2);
    let a = random(&[4, 6, 2], &mut r);
    let b = random(&[4, 6, 2], &mut r);
    let k = random(&[3, 3, 2, 2], &mut r);
    let tape = Tape::new();
    let kv = tape.constant(k);
    let batch = tape.constant(Tensor::stack(&[a.clone(), b.clone()]).unwrap());
    let yb = tape.conv2d(batch, kv, (1, 1), Padding::Same).unwrap();
    for (i, single) in [a, b].into_iter().enumerate() {
        let x = tape.constant(single);
        let y = tape.conv2d(x, kv, (1, 1), Padding::Same).unwrap();
        let yi = tape.select(yb, i).unwrap();
        assert_eq!(tape.data(y), tape.data(yi));
    }
}

#[test]
fn max_pool_picks_maximum() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = tape.pool2d(x, PoolMode::Max).unwrap();
    assert_eq!(tape.data(y), vec![4.0]);
    let y = tape.pool2d(x, PoolMode::Avg).unwrap();
    assert_eq!(tape.data(y), vec![2.5]);
}

#[test]
fn pool_halves_extents_with_floor() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[4, 4, 3]));
    assert_eq!(tape.shape(tape.pool2d(x, PoolMode::Max).unwrap()), vec![2, 2, 3]);
    let x = tape.constant(Tensor::zeros(&[5, 7, 1]));
    assert_eq!(tape.shape(tape.pool2d(x, PoolMode::Max).unwrap()), vec![2, 3, 1]);
}

#[test]
fn pool_rejects_window_larger_than_input() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 4, 1]));
    assert!(tape.pool2d(x, PoolMode::Max).is_err());
}

#[test]
fn max_pool_ties_route_to_first_index() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[2, 2, 1], 1.0));
    let y = tape.pool2d(x, PoolMode::Max).unwrap();
    let s = tape.sum(y);
    tape.backward(s, &mut ParamStore::new()).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn pool_gradients_match_finite_differences() {
    let mut r = rng(3);
    // distinct values so the argmax is stable under the perturbation
    let mut vals: Vec<f64> = (0..72).map(|i| i as f64 * 0.1).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, r.gen_range(0..=i));
    }
    let x = Tensor::new(&[6, 6, 2], vals).unwrap();
    for mode in [PoolMode::Max, PoolMode::Avg] {
        let reports = check_inputs(std::slice::from_ref(&x), DEFAULT_STEP, |t, v| {
            let y = t.pool2d(v[0], mode)?;
            let sq = t.square(y);
            Ok(t.sum(sq))
        })
        .unwrap();
        assert!(worst(&reports) < TOL, "{mode:?}: {reports:?}");
    }
}

#[test]
fn softmax_examples() {
    let tape = Tape::new();
    let x = tape.constant(Tensor::full(&[4], 3.0));
    assert_eq!(tape.data(tape.softmax(x)), vec![0.25; 4]);
    let x = tape.constant(Tensor::new(&[2], vec![0.0, 3f64.ln()]).unwrap());
    let y = tape.data(tape.softmax(x));
    assert!((y[0] - 0.25).abs() < 1e-12 && (y[1] - 0.75).abs() < 1e-12);
}

proptest! {
    #[test]
    fn softmax_is_probability_vector_and_shift_invariant(
        logits in prop::collection::vec(-30.0f64..30.0, 1..40)
    ) {
        let tape = Tape::new();
        let n = logits.len();
        let x = tape.constant(Tensor::new(&[n], logits.clone()).unwrap());
        let y = tape.data(tape.softmax(x));
        prop_assert!(y.iter().all(|&p| p >= 0.0));
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let shifted = tape.constant(Tensor::new(&[n], logits.iter().map(|v| v + 100.0).collect()).unwrap());
        let ys = tape.data(tape.softmax(shifted));
        for (a, b) in y.iter().zip(&ys) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn concat_then_slice_recovers_inputs(
        rows in 1usize..5, da in 1usize..4, db in 1usize..4, seed in any::<u64>()
    ) {
        let mut r = rng(seed);
        let a = random(&[rows, 2, da], &mut r);
        let b = random(&[rows, 2, db], &mut r);
        let tape = Tape::new();
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let c = tape.concat(&[va, vb]).unwrap();
        prop_assert_eq!(tape.value(tape.slice(c, 0, da).unwrap()), a);
        prop_assert_eq!(tape.value(tape.slice(c, da, db).unwrap()), b);
    }
}

#[test]
fn batchnorm_infer_with_fresh_stats_is_identity() {
    let mut r = rng(4);
    let x = random(&[3, 4, 2], &mut r);
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let scale = tape.constant(Tensor::full(&[2], 1.0));
    let shift = tape.constant(Tensor::zeros(&[2]));
    let (y, stats) = tape
        .batchnorm(xv, scale, shift, Mode::Infer, &RunningStats::new(2), 0.0)
        .unwrap();
    assert!(stats.is_none());
    assert_eq!(tape.value(y), x);
}

#[test]
fn batchnorm_train_standardizes_each_channel() {
    let mut r = rng(5);
    let x = Tensor::from_fn(&[2, 5, 6, 3], |i| r.gen_range(-2.0..2.0) * (1 + i % 3) as f64 + 1.5);
    let tape = Tape::new();
    let xv = tape.constant(x);
    let scale = tape.constant(Tensor::full(&[3], 1.0));
    let shift = tape.constant(Tensor::zeros(&[3]));
    let (y, stats) = tape
        .batchnorm(xv, scale, shift, Mode::Train, &RunningStats::new(3), 1e-5)
        .unwrap();
    assert!(stats.is_some());
    let y = tape.data(y);
    for ch in 0..3 {
        let vals: Vec<f64> = y.iter().skip(ch).step_by(3).copied().collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "var {var}");
    }
}

#[test]
fn batchnorm_constant_channel_outputs_shift() {
    let tape = Tape::new();
    let xv = tape.constant(Tensor::full(&[4, 4, 1], 7.0));
    let scale = tape.constant(Tensor::full(&[1], 2.0));
    let shift = tape.constant(Tensor::full(&[1], 0.3));
    let (y, _) = tape
        .batchnorm(xv, scale, shift, Mode::Train, &RunningStats::new(1), 1e-5)
        .unwrap();
    assert!(tape.data(y).iter().all(|&v| v == 0.3));
}

#[test]
fn running_stats_move_towards_batch() {
    let mut rs = RunningStats::new(1);
    let batch = BatchStats {
        mean: vec![2.0],
        var: vec![3.0],
    };
    rs.update(&batch, 0.1);
    assert!((rs.mean[0] - 0.2).abs() < 1e-15);
    assert!((rs.var[0] - 1.2).abs() < 1e-15);
}

#[test]
fn batchnorm_gradients_match_finite_differences() {
    let mut r = rng(6);
    let inputs = [
        random(&[3, 4, 2], &mut r),
        random(&[2], &mut r),
        random(&[2], &mut r),
        random(&[3, 4, 2], &mut r),
    ];
    let running = RunningStats {
        mean: vec![0.1, -0.2],
        var: vec![0.5, 2.0],
    };
    for mode in [Mode::Train, Mode::Infer] {
        let reports = check_inputs(&inputs, DEFAULT_STEP, |t, v| {
            let (y, _) = t.batchnorm(v[0], v[1], v[2], mode, &running, 1e-5)?;
            let w = t.mul(y, v[3])?;
            Ok(t.sum(w))
        })
        .unwrap();
        assert!(worst(&reports[..3]) < TOL, "{mode:?}: {reports:?}");
    }
}

#[test]
fn dropout_identity_cases() {
    let mut r = rng(7);
    let x = random(&[10, 10], &mut r);
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = tape.dropout(xv, 0.0, Mode::Train, &mut r).unwrap();
    assert_eq!(tape.value(y), x);
    let y = tape.dropout(xv, 0.5, Mode::Infer, &mut r).unwrap();
    assert_eq!(tape.value(y), x);
    assert!(tape.dropout(xv, 1.0, Mode::Train, &mut r).is_err());
}

#[test]
fn dropout_zeroes_expected_fraction_and_rescales() {
    let mut r = rng(8);
    let tape = Tape::new();
    let xv = tape.constant(Tensor::full(&[10_000], 1.0));
    let y = tape.data(tape.dropout(xv, 0.2, Mode::Train, &mut r).unwrap());
    let zeroed = y.iter().filter(|&&v| v == 0.0).count() as f64 / 10_000.0;
    assert!((zeroed - 0.2).abs() < 0.02, "{zeroed}");
    assert!(y.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
}

#[test]
fn backward_of_sum_of_squares_is_twice_input() {
    let mut r = rng(9);
    let x = random(&[7], &mut r);
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let s = tape.sum(tape.square(xv));
    tape.backward(s, &mut ParamStore::new()).unwrap();
    let g = tape.grad(xv).unwrap();
    for (gi, xi) in g.data().iter().zip(x.data()) {
        assert_eq!(*gi, 2.0 * xi);
    }
}

#[test]
fn backward_rejects_non_scalar_root() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[3]));
    assert!(tape.backward(x, &mut ParamStore::new()).is_err());
}

#[test]
fn disconnected_parameter_gets_zero_gradient() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::full(&[3], 0.5), LayerKind::NonConvolutional).unwrap();
    let b = store.add("b", Tensor::full(&[3], 0.5), LayerKind::NonConvolutional).unwrap();
    let tape = Tape::new();
    let av = tape.param(&store, a);
    let _bv = tape.param(&store, b);
    let s = tape.sum(tape.square(av));
    tape.backward(s, &mut store).unwrap();
    assert_eq!(store.get(a).grad.data(), &[1.0, 1.0, 1.0]);
    assert!(store.get(b).grad.data().iter().all(|&g| g == 0.0));
}

#[test]
fn repeated_backward_accumulates() {
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::full(&[2], 3.0), LayerKind::NonConvolutional).unwrap();
    let tape = Tape::new();
    let av = tape.param(&store, a);
    let s = tape.sum(av);
    tape.backward(s, &mut store).unwrap();
    tape.backward(s, &mut store).unwrap();
    assert_eq!(store.get(a).grad.data(), &[2.0, 2.0]);
    store.zero_grads();
    assert_eq!(store.get(a).grad.data(), &[0.0, 0.0]);
}

#[test]
fn backward_is_linear_in_the_root() {
    let mut r = rng(10);
    let x = random(&[5], &mut r);
    let w = random(&[5], &mut r);
    let grad_of = |build: &dyn Fn(&Tape, Var, Var) -> Var| {
        let tape = Tape::new();
        let (xv, wv) = (tape.leaf(x.clone()), tape.constant(w.clone()));
        let root = build(&tape, xv, wv);
        tape.backward(root, &mut ParamStore::new()).unwrap();
        tape.grad(xv).unwrap().into_data()
    };
    let f = |t: &Tape, x: Var, _w: Var| t.sum(t.tanh(x));
    let g = |t: &Tape, x: Var, w: Var| t.sum(t.mul(x, w).unwrap());
    let both = grad_of(&|t, x, w| {
        let a = f(t, x, w);
        let b = g(t, x, w);
        t.add(a, b).unwrap()
    });
    let (gf, gg) = (grad_of(&f), grad_of(&g));
    for i in 0..5 {
        assert!((both[i] - (gf[i] + gg[i])).abs() < 1e-15);
    }
}

#[test]
fn elementwise_and_matrix_gradients_match_finite_differences() {
    let mut r = rng(11);
    let inputs = [
        random(&[3, 4], &mut r),
        random(&[4, 2], &mut r),
        random(&[5, 4], &mut r),
        random(&[4], &mut r),
        random(&[3], &mut r),
    ];
    let reports = check_inputs(&inputs, DEFAULT_STEP, |t, v| {
        let ab = t.matmul(v[0], v[1])?; // [3,2]
        let act = t.matmul_t(v[0], v[2])?; // [3,5]
        let mv = t.matvec(v[2], v[3])?; // [5]
        let vm = t.vecmat(v[4], v[0])?; // [4]
        let rows = t.add_row(v[0], v[3])?; // [3,4]
        let s1 = t.sum(t.sigmoid(ab));
        let s2 = t.sum(t.square(t.tanh(act)));
        let s3 = t.sum(t.mul(t.relu(mv), mv)?);
        let s4 = t.sum(t.abs(vm));
        let col = t.column(rows, 2)?;
        let s5 = t.sum(t.square(t.one_minus(col)));
        let sub = t.sub(v[3], vm)?;
        let s6 = t.sum(t.square(t.scale(sub, 0.7)));
        t.add_all(&[s1, s2, s3, s4, s5, s6])
    })
    .unwrap();
    assert!(worst(&reports) < TOL, "{reports:?}");
}

#[test]
fn structural_gradients_match_finite_differences() {
    let mut r = rng(12);
    let inputs = [random(&[2, 3, 2], &mut r), random(&[2, 3, 1], &mut r), random(&[6], &mut r)];
    let reports = check_inputs(&inputs, DEFAULT_STEP, |t, v| {
        let c = t.concat(&[v[0], v[1]])?; // [2,3,3]
        let s = t.slice(c, 1, 2)?; // [2,3,2]
        let first = t.select(s, 0)?; // [3,2]
        let flat = t.reshape(first, &[6])?;
        let w = t.mul(flat, v[2])?;
        let p = t.softmax(w);
        let lp = t.log_pick(p, 4, 1e-12)?;
        let sq = t.sum(t.square(c));
        let neg = t.scale(lp, -1.0);
        t.add(neg, sq)
    })
    .unwrap();
    assert!(worst(&reports) < TOL, "{reports:?}");
}

#[test]
fn log_pick_floor_guards_zero_probability() {
    let tape = Tape::new();
    let p = tape.leaf(Tensor::new(&[2], vec![0.0, 1.0]).unwrap());
    let lp = tape.log_pick(p, 0, 1e-12).unwrap();
    assert!((tape.scalar(lp) - 1e-12f64.ln()).abs() < 1e-12);
    tape.backward(lp, &mut ParamStore::new()).unwrap();
    assert_eq!(tape.grad(p).unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn composite_conv_softmax_cross_entropy_param_gradients() {
    let mut r = rng(13);
    let mut store = ParamStore::new();
    store
        .add("kernel", random(&[3, 3, 2, 2], &mut r), LayerKind::Convolutional)
        .unwrap();
    store
        .add("proj", random(&[4, 8], &mut r), LayerKind::NonConvolutional)
        .unwrap();
    let image = random(&[2, 4, 2], &mut r);
    let reports = check_params(&store, DEFAULT_STEP, |t, s| {
        let x = t.constant(image.clone());
        let k = t.param(s, s.id("kernel").unwrap());
        let y = t.conv2d(x, k, (1, 1), Padding::Same)?;
        let flat = t.reshape(t.relu(y), &[16])?;
        let pooled = t.reshape(flat, &[2, 8])?;
        let row = t.select(pooled, 1)?;
        let logits = t.matvec(t.param(s, s.id("proj").unwrap()), row)?;
        let p = t.softmax(logits);
        let lp = t.log_pick(p, 2, 1e-12)?;
        Ok(t.scale(lp, -1.0))
    })
    .unwrap();
    assert!(worst(&reports) < TOL, "{reports:?}");
    assert!(reports.iter().all(|r| r.analytic_norm > 0.0));
}

#[test]
fn param_store_rejects_duplicate_names() {
    let mut store = ParamStore::new();
    store.add("w", Tensor::zeros(&[1]), LayerKind::Convolutional).unwrap();
    assert!(store.add("w", Tensor::zeros(&[1]), LayerKind::Convolutional).is_err());
    assert!(store.add_buffer("w", Tensor::zeros(&[1])).is_err());
}

#[test]
fn tensor_rejects_inconsistent_shape() {
    assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::new(&[0, 3], vec![]).is_err());
}
