//! Central finite differences, used as an independent check on the tape.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttentionMask, Gradients, Graph, ParamStore, Tensor, Var};

/// Numerical gradient of a scalar function by central differences.
pub fn numerical_grad(input: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut x = input.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + step;
        let plus = f(&x);
        x.data_mut()[i] = orig - step;
        let minus = f(&x);
        x.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    out
}

/// Largest relative error `|a - n| / max(|a|, |n|, floor)` across entries.
///
/// The floor keeps entries whose true gradient is ~0 from dominating.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Checks tape gradients of every parameter in `store` against central
/// differences of `loss`. Parameters the tape never touched count as zero.
pub fn store_relative_error(
    store: &ParamStore,
    analytic: &Gradients,
    step: f64,
    floor: f64,
    mut loss: impl FnMut(&ParamStore) -> f64,
) -> f64 {
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        let a = analytic.get_or_zero(store, id);
        for i in 0..a.len() {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + step;
            let plus = loss(&probe);
            probe.get_mut(id).data_mut()[i] = orig - step;
            let minus = loss(&probe);
            probe.get_mut(id).data_mut()[i] = orig;
            let n = (plus - minus) / (2.0 * step);
            worst = worst.max(max_relative_error(&a.data()[i..=i], &[n], floor));
        }
    }
    worst
}

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::matrix(rows, cols, data).expect("sized data")
}

/// Checks one primitive against central differences on a random input.
pub fn check_op(build: impl Fn(&mut Graph, Var) -> Var, rows: usize, cols: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = random(rows, cols, &mut rng);
    // random projection so every output entry matters
    let out_len = {
        let mut g = Graph::new();
        let x = g.constant(x0.clone());
        let y = build(&mut g, x);
        g.value(y).len()
    };
    let w: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = |t: &Tensor| {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let y = build(&mut g, x);
        g.value(y).data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
    };
    let mut g = Graph::new();
    let x = g.variable(x0.clone());
    let y = build(&mut g, x);
    let (m, n) = (g.value(y).rows(), g.value(y).cols());
    let wv = g.constant(Tensor::matrix(m, n, w.clone()).unwrap());
    let p = g.mul(y, wv);
    let s = g.sum(p);
    g.backward(s).unwrap();
    let analytic = g.grad(x).unwrap().to_vec();
    let numeric = numerical_grad(&x0, 1e-3, f);
    max_relative_error(&analytic, &numeric, 1e-2)
}

/// Relative error of every differentiable primitive on inputs in [-2, 2].
pub fn primitive_report(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(5, 3, &mut rng);
    let gamma = random(1, 5, &mut rng);
    let beta = random(1, 5, &mut rng);
    let targets01: Vec<f64> = (0..20).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let weights: Vec<f64> = (0..20).map(|i| if i % 7 == 0 { 0.0 } else { 1.0 }).collect();
    let target_feat = random(4, 5, &mut rng).into_data();
    let mut mask = AttentionMask::full(4);
    mask.block_key(1);
    vec![
        ("matmul", check_op(|g, x| { let c = g.constant(w.clone()); g.matmul(x, c) }, 4, 5, 1)),
        ("matmul_t", check_op(|g, x| { let c = g.constant(w.clone()); g.matmul_t(c, x) }, 4, 3, 2)),
        ("add_row", check_op(|g, x| { let c = g.constant(beta.clone()); g.add_row(x, c) }, 4, 5, 3)),
        ("mul", check_op(|g, x| g.mul(x, x), 4, 5, 4)),
        ("softmax", check_op(|g, x| g.softmax(x), 4, 5, 5)),
        ("layer_norm", check_op(|g, x| {
            let ga = g.constant(gamma.clone());
            let be = g.constant(beta.clone());
            g.layer_norm(x, ga, be)
        }, 4, 5, 6)),
        ("gather", check_op(|g, x| g.gather_rows(x, &[2, 0, 2, 3]), 4, 5, 7)),
        ("sigmoid", check_op(|g, x| g.sigmoid(x), 4, 5, 8)),
        ("tanh", check_op(|g, x| g.tanh(x), 4, 5, 9)),
        ("gelu", check_op(|g, x| g.gelu(x), 4, 5, 10)),
        ("slice_cols", check_op(|g, x| g.slice_cols(x, 1, 3), 4, 5, 11)),
        ("concat", check_op(|g, x| {
            let a = g.slice_rows(x, 0, 2);
            let b = g.slice_cols(x, 0, 2);
            let c = g.concat_cols(&[a, a]);
            let d = g.concat_rows(&[b, b]);
            let e = g.slice_cols(c, 0, 2);
            g.concat_rows(&[e, d])
        }, 4, 5, 12)),
        ("cross_entropy", check_op(|g, x| g.cross_entropy(x, &[0, 4, 2, 2], 4.0), 4, 5, 13)),
        ("bce", check_op(|g, x| g.bce_with_logits(x, &targets01, &weights, 3.0), 4, 5, 14)),
        ("squared_error", check_op(|g, x| g.squared_error(x, &target_feat, 2.0), 4, 5, 15)),
        ("attention", check_op(|g, x| {
            let q = g.slice_cols(x, 0, 4);
            let k = g.slice_cols(x, 1, 4);
            let v = g.mul(q, k);
            g.attention(q, k, v, &mask, 2).unwrap()
        }, 4, 5, 16)),
    ]
}
