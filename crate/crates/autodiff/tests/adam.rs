use geopoi_autodiff::{Adam, Gradients, Graph, ParamStore, Tensor, TensorError};

fn store(values: Vec<f64>) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("w", Tensor::vector(values));
    s
}

fn grads(values: Vec<f64>) -> Gradients {
    let mut g = Gradients::new();
    g.insert("w", Tensor::vector(values));
    g
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut s = store(vec![0.3, -1.2]);
    let mut adam = Adam::new(1e-2);
    for _ in 0..5 {
        adam.step(&mut s, grads(vec![0.0, 0.0])).unwrap();
    }
    assert_eq!(s.value("w").unwrap().data(), &[0.3, -1.2]);
}

#[test]
fn constant_gradient_moves_against_its_sign() {
    let mut s = store(vec![0.0, 0.0]);
    let mut adam = Adam::new(1e-2);
    for _ in 0..100 {
        adam.step(&mut s, grads(vec![2.5, -0.01])).unwrap();
    }
    let w = s.value("w").unwrap().data();
    assert!(w[0] < -0.5 && w[1] > 0.5, "{w:?}");
}

#[test]
fn first_step_magnitude_equals_learning_rate() {
    // Closed form at t=1: m̂ = g, v̂ = g², so Δ = lr·g/(|g| + ε).
    let lr = 3e-3;
    for g in [1e-3, 0.7, -42.0] {
        let mut s = store(vec![1.0]);
        let mut adam = Adam::new(lr);
        adam.step(&mut s, grads(vec![g])).unwrap();
        let expected = 1.0 - lr * g / (g.abs() + 1e-8);
        let got = s.value("w").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-15, "g={g}: {got} vs {expected}");
        assert!(((1.0 - got).abs() - lr).abs() < lr * 1e-4);
    }
}

#[test]
fn missing_gradient_is_an_error() {
    let mut s = store(vec![1.0]);
    s.insert("other", Tensor::vector(vec![2.0]));
    let mut adam = Adam::new(1e-3);
    assert!(matches!(
        adam.step(&mut s, Gradients::new()),
        Err(TensorError::MissingGradient(_))
    ));
    assert!(matches!(
        adam.step(&mut s, grads(vec![1.0])),
        Err(TensorError::MissingGradient(name)) if name == "other"
    ));
    // nothing moved on the failed step
    assert_eq!(s.value("w").unwrap().data(), &[1.0]);
}

#[test]
fn frozen_parameters_are_skipped() {
    let mut s = store(vec![1.0]);
    s.insert_frozen("frozen", Tensor::vector(vec![5.0]));
    let mut adam = Adam::new(0.1);
    adam.step(&mut s, grads(vec![1.0])).unwrap();
    assert_eq!(s.value("frozen").unwrap().data(), &[5.0]);
}

#[test]
fn minimizes_a_quadratic_through_the_tape() {
    let mut s = store(vec![3.0, -2.0]);
    let mut adam = Adam::new(0.05);
    for _ in 0..500 {
        let mut g = Graph::new();
        let w = g.param(&s, "w").unwrap();
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap().into_params();
        adam.step(&mut s, grads).unwrap();
    }
    for v in s.value("w").unwrap().data() {
        assert!(v.abs() < 1e-2, "{v}");
    }
}
