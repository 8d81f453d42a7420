use geopoi_autodiff::{Graph, Tensor};
use proptest::prelude::*;

fn softmax(row: Vec<f64>) -> Vec<f64> {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(row));
    let y = g.softmax_rows(x).unwrap();
    g.value(y).data().to_vec()
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(row in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let s: f64 = softmax(row).iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant(
        row in prop::collection::vec(-20.0f64..20.0, 1..20),
        shift in -100.0f64..100.0,
    ) {
        let a = softmax(row.clone());
        let b = softmax(row.iter().map(|v| v + shift).collect());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn tensor_length_matches_shape(r in 0usize..6, c in 0usize..6) {
        prop_assert!(Tensor::new(vec![r, c], vec![0.0; r * c]).is_ok());
        prop_assert!(Tensor::new(vec![r, c], vec![0.0; r * c + 1]).is_err());
    }
}

#[test]
fn identical_op_sequences_are_bitwise_deterministic() {
    use rand::SeedableRng;
    let run = || {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut g = Graph::new();
        let a = g.leaf(Tensor::randn(vec![16, 16], 1.0, &mut rng));
        let b = g.leaf(Tensor::randn(vec![16, 16], 1.0, &mut rng));
        let c = g.matmul(a, b).unwrap();
        let s = g.softmax_rows(c).unwrap();
        let l = g.cross_entropy_logits(s, &[3; 16]).unwrap();
        let grads = g.backward(l).unwrap();
        let mut bits: Vec<u64> = g.value(l).data().iter().map(|v| v.to_bits()).collect();
        bits.extend(grads.wrt(a).unwrap().iter().map(|v| v.to_bits()));
        bits
    };
    assert_eq!(run(), run());
}
