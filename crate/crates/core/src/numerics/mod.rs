//! Dense tensors, tape autodiff, attention, and Adam.

mod adam;
pub mod gradcheck;
mod graph;
mod mask;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{bce_logit, sigmoid, Graph, Var};
pub use mask::AttentionMask;
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::gradcheck;
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn square_has_derivative_two_x() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::scalar(3.0));
        let y = g.mul(x, x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let x = g.variable(random(2, 5, &mut rng));
        let s = g.softmax(x);
        let total = g.sum(s);
        g.backward(total).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::zeros(2, 2));
        assert!(matches!(g.backward(x), Err(crate::Error::NotScalar { rows: 2, cols: 2 })));
    }

    #[test]
    fn unused_param_is_reported_missing() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::scalar(1.0));
        let b = store.add("b", Tensor::scalar(2.0));
        let mut g = Graph::new();
        let va = g.param(&store, a);
        let y = g.mul(va, va);
        let grads = g.param_grads(y, &store).unwrap();
        assert_eq!(grads.missing(), vec![b]);
        assert_eq!(grads.get_or_zero(&store, b).item(), 0.0);
        assert_eq!(grads.get(a).unwrap().item(), 2.0);
    }

    #[test]
    fn layer_norm_rows_are_standardised() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = Graph::new();
        let x = g.constant(random(4, 16, &mut rng));
        let gamma = g.constant(Tensor::filled(1, 16, 1.0));
        let beta = g.constant(Tensor::zeros(1, 16));
        let y = g.layer_norm(x, gamma, beta);
        for r in 0..4 {
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-4);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn attention_equal_scores_average_values() {
        // zero queries give equal scores over every allowed key
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(3, 2));
        let k = g.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]).unwrap());
        let v = g.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[2.0, 2.0]]).unwrap());
        let out = g.attention(q, k, v, &AttentionMask::full(3), 1).unwrap();
        for r in 0..3 {
            let row = g.value(out).row(r);
            assert!((row[0] - 1.0).abs() < 1e-12 && (row[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_two_keys_matches_hand_mixture() {
        // one query [1, 0], keys [1, 0] and [0, 1]: scores 1/√2 and 0
        let mut g = Graph::new();
        let q = g.constant(Tensor::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]).unwrap());
        let k = g.constant(Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
        let v = g.constant(Tensor::from_rows(&[&[10.0, 0.0], &[0.0, 10.0]]).unwrap());
        let out = g.attention(q, k, v, &AttentionMask::full(2), 1).unwrap();
        let s = core::f64::consts::FRAC_1_SQRT_2;
        let w0 = libm::exp(s) / (libm::exp(s) + 1.0);
        let row = g.value(out).row(0);
        assert!((row[0] - 10.0 * w0).abs() < 1e-12);
        assert!((row[1] - 10.0 * (1.0 - w0)).abs() < 1e-12);
    }

    #[test]
    fn masked_key_gets_no_gradient_and_empty_rows_are_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let q = g.variable(random(3, 4, &mut rng));
        let k = g.variable(random(3, 4, &mut rng));
        let v = g.variable(random(3, 4, &mut rng));
        let mut mask = AttentionMask::full(3);
        mask.block_key(2);
        mask.set_block(1..2, 0..3, false);
        let out = g.attention(q, k, v, &mask, 2).unwrap();
        assert!(g.value(out).row(1).iter().all(|&x| x == 0.0));
        let s = g.sum(out);
        g.backward(s).unwrap();
        let dv = g.grad(v).unwrap();
        assert!(dv[8..12].iter().all(|&x| x == 0.0));
        let dk = g.grad(k).unwrap();
        assert!(dk[8..12].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn attention_rejects_indivisible_heads() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(2, 6));
        let r = g.attention(q, q, q, &AttentionMask::full(2), 4);
        assert!(matches!(r, Err(crate::Error::HeadsNotDivisible { hidden: 6, heads: 4 })));
    }

    #[test]
    fn primitives_match_finite_differences() {
        for (name, err) in gradcheck::primitive_report(9) {
            assert!(err < 1e-3, "{name}: relative error {err}");
        }
    }
}
