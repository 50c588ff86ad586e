use evseq_core::metrics::{
    bleu4, detection_pr, meteor_lite, order_preserving_max, soda, tiou, InnerMetric, SodaMode, DETECTION_THRESHOLDS,
};
use evseq_core::event_codec::TimeInterval;
use evseq_core::submission::{Prediction, Submission};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every order-preserving partial matching, enumerated recursively.
fn brute_force(scores: &[f64], rows: usize, cols: usize) -> f64 {
    fn go(s: &[f64], cols: usize, i: usize, j0: usize, rows: usize) -> f64 {
        if i == rows {
            return 0.0;
        }
        let mut best = go(s, cols, i + 1, j0, rows);
        for j in j0..cols {
            best = best.max(s[i * cols + j] + go(s, cols, i + 1, j + 1, rows));
        }
        best
    }
    go(scores, cols, 0, 0, rows)
}

#[test]
fn dp_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..2000 {
        let (r, c) = (rng.random_range(0..=4), rng.random_range(0..=4));
        let s: Vec<f64> = (0..r * c).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random() }).collect();
        let (dp, bf) = (order_preserving_max(&s, r, c), brute_force(&s, r, c));
        assert!((dp - bf).abs() < 1e-12, "{r}x{c} {s:?}: {dp} vs {bf}");
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn bleu_and_meteor_extremes() {
    let r = vec![words("a man is slicing bread in the kitchen")];
    assert!((bleu4(&r[0], &r) - 1.0).abs() < 1e-12);
    assert!(meteor_lite(&r[0], &r) > 0.99);
    assert!(bleu4(&words("zebra"), &r) < 0.1 && meteor_lite(&words("zebra"), &r) == 0.0);
    assert!(bleu4(&[], &r) == 0.0 && meteor_lite(&[], &r) == 0.0);
}

fn pred(s: f64, e: f64, text: &str) -> Prediction {
    Prediction::new(s, e, text)
}

proptest! {
    #[test]
    fn tiou_is_symmetric_and_bounded(a in 0.0f64..50.0, b in 0.0f64..50.0, c in 0.0f64..50.0, d in 0.0f64..50.0) {
        let x = TimeInterval { start: a.min(b), end: a.max(b) };
        let y = TimeInterval { start: c.min(d), end: c.max(d) };
        let t = tiou(x, y);
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert_eq!(t, tiou(y, x));
        prop_assert_eq!(tiou(x, x), 1.0);
    }

    #[test]
    fn perfect_submission_scores_full_marks(n in 1usize..6) {
        let mut refs = Submission::new();
        refs.insert("v", (0..n).map(|i| pred(i as f64 * 10.0, i as f64 * 10.0 + 7.0, &format!("person does step {i}"))).collect());
        let det = detection_pr(&refs, std::slice::from_ref(&refs), &DETECTION_THRESHOLDS).unwrap();
        prop_assert!((det.avg_recall - 100.0).abs() < 1e-9 && (det.avg_precision - 100.0).abs() < 1e-9);
        for mode in [SodaMode::Old, SodaMode::Mr] {
            let s = soda(&refs, std::slice::from_ref(&refs), InnerMetric::MeteorLite, mode).unwrap();
            prop_assert!(s.f1 > 0.99);
        }
    }
}
