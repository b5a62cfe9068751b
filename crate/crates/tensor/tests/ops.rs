use callstack_tensor::{
    Adam, AdamConfig, ParamStore, ReduceKind, Tape, Tensor, TensorError,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], xs: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, xs).unwrap()
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::<f64>::new();
    let eye = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
    let col = tape.constant(t(&[2, 1], &[3., 4.]));
    let y = tape.matmul(eye, col).unwrap();
    assert_eq!(tape.value(y).data(), &[3., 4.]);

    let a = tape.constant(t(&[1, 1], &[2.]));
    let b = tape.constant(t(&[1, 1], &[5.]));
    let y = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(y).data(), &[10.]);

    let bad = tape.constant(t(&[3, 1], &[0.; 3]));
    assert!(matches!(
        tape.matmul(eye, bad),
        Err(TensorError::Dimension { .. })
    ));
}

#[test]
fn relu_examples() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("x", t(&[3], &[-1., 0., 2.]));
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0., 0., 2.]);
    let loss = tape.sum_all(y).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0., 0., 1.]);

    let mut store = ParamStore::<f64>::new();
    let id = store.add("x", t(&[3], &[-1., -2., -0.5]));
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let y = tape.relu(x);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    let loss = tape.sum_all(y).unwrap();
    let g = tape.backward(loss).unwrap();
    assert!(g.get(x).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(t(&[2], &[0., 0.]));
    let l = tape.softmax_cross_entropy(z, &[0], None).unwrap();
    assert!((tape.value(l).item() - 2f64.ln()).abs() < 1e-12);

    let z = tape.constant(t(&[2], &[1000., 0.]));
    let l = tape.softmax_cross_entropy(z, &[0], None).unwrap();
    let v = tape.value(l).item();
    assert!(v.is_finite() && v.abs() < 1e-12);

    let z = tape.constant(t(&[3], &[0., 0., 0.]));
    let l = tape.softmax_cross_entropy(z, &[1], None).unwrap();
    assert!((tape.value(l).item() - 3f64.ln()).abs() < 1e-12);

    assert!(matches!(
        tape.softmax_cross_entropy(z, &[0], Some(&[false, false, false])),
        Err(TensorError::InvalidInput { .. })
    ));
    assert!(tape.softmax_cross_entropy(z, &[3], None).is_err());
}

#[test]
fn reduce_examples() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("x", t(&[3], &[1., 3., 2.]));
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let s = tape.reduce(x, 0, ReduceKind::Sum).unwrap();
    assert_eq!(tape.value(s).item(), 6.0);
    let m = tape.reduce(x, 0, ReduceKind::Max).unwrap();
    assert_eq!(tape.value(m).item(), 3.0);
    let g = tape.backward(m).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0., 1., 0.]);

    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let mean = tape.reduce(x, 0, ReduceKind::Mean).unwrap();
    assert_eq!(tape.value(mean).data(), &[2., 3.]);
    assert!(tape.reduce(x, 2, ReduceKind::Sum).is_err());
}

#[test]
fn max_ties_route_to_lowest_index() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("x", t(&[4], &[2., 5., 5., 1.]));
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let m = tape.reduce(x, 0, ReduceKind::Max).unwrap();
    let g = tape.backward(m).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0., 1., 0., 0.]);
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", t(&[3], &[0.1, -0.2, 0.3]));
    let unused = store.add("unused", t(&[2], &[1., 1.]));
    let mut tape = Tape::new();
    let wv = tape.param(&store, w);
    let uv = tape.param(&store, unused);
    let _ = tape.scale(uv, 2.0);
    let loss = tape.sum_all(wv).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(wv).unwrap(), &[1., 1., 1.]);
    store.accumulate(&tape, &g, 1.0);
    assert_eq!(store.grad(unused).data(), &[0., 0.]);

    assert!(matches!(
        tape.backward(wv),
        Err(TensorError::InvalidInput { .. })
    ));
}

#[test]
fn backward_is_deterministic() {
    let mut store = ParamStore::<f32>::new();
    let a = store.add("a", Tensor::from_f64(&[3, 4], &(0..12).map(|i| (i as f64).sin()).collect::<Vec<_>>()).unwrap());
    let b = store.add("b", Tensor::from_f64(&[4, 2], &(0..8).map(|i| (i as f64).cos()).collect::<Vec<_>>()).unwrap());
    let mut tape = Tape::new();
    let (va, vb) = (tape.param(&store, a), tape.param(&store, b));
    let y = tape.matmul(va, vb).unwrap();
    let y = tape.relu(y);
    let l = tape.softmax_cross_entropy(y, &[0, 1, 1], None).unwrap();
    let g1 = tape.backward(l).unwrap();
    let g2 = tape.backward(l).unwrap();
    assert_eq!(g1.get(va), g2.get(va));
    assert_eq!(g1.get(vb), g2.get(vb));
}

#[test]
fn adam_solves_least_squares() {
    // minimise |X w - y|^2 with X = [[1, 0], [0, 1], [1, 1]], y = X [0.5, -1.25]
    let x = t(&[3, 2], &[1., 0., 0., 1., 1., 1.]);
    let y = t(&[3, 1], &[0.5, -1.25, -0.75]);
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::zeros(&[2, 1]));
    let mut adam = Adam::new(
        &store,
        AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        },
    );
    let mut loss = f64::INFINITY;
    for _ in 0..200 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.param(&store, w);
        let pred = tape.matmul(xv, wv).unwrap();
        let l = tape.mse_loss(pred, &y).unwrap();
        loss = tape.value(l).item();
        let g = tape.backward(l).unwrap();
        store.accumulate(&tape, &g, 1.0);
        adam.step(&mut store).unwrap();
    }
    // evaluate after the final update
    let wv = store.value(w).data();
    let final_loss: f64 = [(1., 0., 0.5), (0., 1., -1.25), (1., 1., -0.75)]
        .iter()
        .map(|&(a, b, target)| (a * wv[0] + b * wv[1] - target).powi(2))
        .sum::<f64>()
        / 3.0;
    assert!(final_loss < 1e-6, "loss {final_loss} (last recorded {loss})");
    assert_eq!(adam.step_count(), 200);
}

proptest! {
    #[test]
    fn canonical_sum_is_permutation_invariant(
        xs in proptest::collection::vec(-1e6f64..1e6, 1..40),
        seed in any::<u64>(),
    ) {
        let mut shuffled = xs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::from_vec(xs));
        let b = tape.constant(Tensor::from_vec(shuffled));
        let sa = tape.reduce(a, 0, ReduceKind::SumCanonical).unwrap();
        let sb = tape.reduce(b, 0, ReduceKind::SumCanonical).unwrap();
        prop_assert_eq!(tape.value(sa).item().to_bits(), tape.value(sb).item().to_bits());
    }

    #[test]
    fn gradients_have_parameter_shape_and_are_finite(
        rows in 1usize..5, cols in 1usize..5,
        vals in proptest::collection::vec(-3.0f64..3.0, 25),
    ) {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::new(vec![rows, cols], vals[..rows * cols].to_vec()).unwrap());
        let mut tape = Tape::new();
        let x = tape.param(&store, id);
        let r = tape.relu(x);
        let m = tape.reduce(r, 1, ReduceKind::Max).unwrap();
        let l = tape.softmax_cross_entropy(m, &[0], None).unwrap();
        let g = tape.backward(l).unwrap();
        store.accumulate(&tape, &g, 1.0);
        prop_assert_eq!(store.grad(id).shape(), &[rows, cols]);
        prop_assert!(store.grad(id).all_finite());
    }
}
