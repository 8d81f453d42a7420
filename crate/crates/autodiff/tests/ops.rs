use geopoi_autodiff::{Graph, Tensor, TensorError};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![3.5; 7]));
    let y = g.softmax_rows(x).unwrap();
    for v in g.value(y).data() {
        assert!(close(*v, 1.0 / 7.0, 1e-15));
    }
}

#[test]
fn identity_matmul_returns_operand() {
    let mut g = Graph::new();
    let a = Tensor::matrix(3, 2, vec![1.0, -2.0, 0.5, 4.0, 9.0, -1.5]).unwrap();
    let i = g.constant(Tensor::identity(3));
    let av = g.constant(a.clone());
    let out = g.matmul(i, av).unwrap();
    assert_eq!(g.value(out), &a);
}

#[test]
fn cross_entropy_uniform_two_class() {
    let mut g = Graph::new();
    let logits = g.constant(Tensor::row(vec![0.0, 0.0]));
    let loss = g.cross_entropy_logits(logits, &[0]).unwrap();
    assert!(close(g.value(loss).item().unwrap(), std::f64::consts::LN_2, 1e-15));
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum(sq);
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[2.0, 4.0]);
}

#[test]
fn sin_gradient_at_zero() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(0.0));
    let y = g.sin(x);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[1.0]);
}

#[test]
fn reused_leaf_accumulates_every_use() {
    // y = x*x + 3x at x = 2 -> dy/dx = 2x + 3 = 7
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(2.0));
    let sq = g.mul(x, x).unwrap();
    let lin = g.scale(x, 3.0);
    let y = g.add(sq, lin).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap(), &[7.0]);
}

#[test]
fn shape_mismatch_reports_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");

    let c = g.constant(Tensor::zeros(vec![3, 2]));
    assert!(matches!(g.add(a, c), Err(TensorError::ShapeMismatch { .. })));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    let y = g.sin(x);
    assert!(matches!(g.backward(y), Err(TensorError::NotScalar(_))));
}

#[test]
fn causal_mask_blocks_future_positions() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(3, 3, vec![1.0; 9]).unwrap());
    let masked = g.causal_mask(x).unwrap();
    let p = g.softmax_rows(masked).unwrap();
    let v = g.value(p).data();
    assert_eq!(&v[0..3], &[1.0, 0.0, 0.0]);
    assert!(close(v[3], 0.5, 1e-15) && v[5] == 0.0);
    assert!(close(v[8], 1.0 / 3.0, 1e-15));
}

#[test]
fn gather_and_replace_rows() {
    let mut g = Graph::new();
    let table = g.constant(Tensor::matrix(3, 2, vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0]).unwrap());
    let rows = g.gather_rows(table, &[2, 0, 2]).unwrap();
    assert_eq!(g.value(rows).data(), &[20.0, 21.0, 0.0, 1.0, 20.0, 21.0]);
    let src = g.constant(Tensor::row(vec![-1.0, -2.0]));
    let out = g.replace_rows(table, &[1], src).unwrap();
    assert_eq!(g.value(out).data(), &[0.0, 1.0, -1.0, -2.0, 20.0, 21.0]);
    assert!(g.gather_rows(table, &[3]).is_err());
    let two = g.constant(Tensor::zeros(vec![2, 2]));
    assert!(g.replace_rows(table, &[1, 1], two).is_err());
}

#[test]
fn layer_norm_rows_have_zero_mean_unit_variance() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(2, 4, vec![1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0]).unwrap());
    let gain = g.constant(Tensor::vector(vec![1.0; 4]));
    let bias = g.constant(Tensor::vector(vec![0.0; 4]));
    let y = g.layer_norm(x, gain, bias, 0.0).unwrap();
    for r in 0..2 {
        let row = g.value(y).row_slice(r);
        let mean: f64 = row.iter().sum::<f64>() / 4.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(close(mean, 0.0, 1e-12) && close(var, 1.0, 1e-12));
    }
}

#[test]
fn log_sigmoid_is_stable_for_large_inputs() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![-800.0, 0.0, 800.0]));
    let y = g.log_sigmoid(x);
    let v = g.value(y).data();
    assert!(close(v[0], -800.0, 1e-9));
    assert!(close(v[1], -std::f64::consts::LN_2, 1e-15));
    assert!(v[2] <= 0.0 && v[2] > -1e-300);
}
