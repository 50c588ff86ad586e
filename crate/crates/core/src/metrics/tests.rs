use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::*;

fn iv(s: f64, e: f64) -> TimeInterval {
    TimeInterval { start: s, end: e }
}

fn toks(s: &str) -> Vec<String> {
    metric_tokens(s)
}

fn sub(videos: &[(&str, &[(f64, f64, &str)])]) -> Submission {
    let mut out = Submission::new();
    for (v, preds) in videos {
        out.insert(*v, preds.iter().map(|&(s, e, t)| Prediction::new(s, e, t)).collect());
    }
    out
}

#[test]
fn tiou_examples() {
    assert_eq!(tiou(iv(1.0, 4.0), iv(1.0, 4.0)), 1.0);
    assert_eq!(tiou(iv(0.0, 1.0), iv(2.0, 3.0)), 0.0);
    assert!((tiou(iv(0.0, 2.0), iv(1.0, 3.0)) - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(tiou(iv(2.0, 2.0), iv(2.0, 2.0)), 1.0);
    assert_eq!(tiou(iv(2.0, 2.0), iv(3.0, 3.0)), 0.0);
    assert_eq!(tiou(iv(2.0, 2.0), iv(1.0, 3.0)), 0.0);
}

#[test]
fn detection_perfect_empty_and_half() {
    let gt = sub(&[("a", &[(0.0, 2.0, "x"), (3.0, 5.0, "y")]), ("b", &[(1.0, 4.0, "z")])]);
    let refs = [gt.clone()];
    let r = detection_pr(&gt, &refs, &DETECTION_THRESHOLDS).unwrap();
    assert_eq!((r.avg_recall, r.avg_precision), (100.0, 100.0));

    let r = detection_pr(&Submission::new(), &refs, &DETECTION_THRESHOLDS).unwrap();
    assert_eq!((r.avg_recall, r.avg_precision), (0.0, 0.0));

    let one = sub(&[("a", &[(0.0, 2.0, "x")])]);
    let half = [sub(&[("a", &[(0.0, 2.0, "x"), (3.0, 5.0, "y")])])];
    let r = detection_pr(&one, &half, &DETECTION_THRESHOLDS).unwrap();
    for t in &r.thresholds {
        assert_eq!((t.recall, t.precision), (50.0, 100.0));
    }
    assert_eq!(r.events_per_video, 1.0);
}

#[test]
fn detection_rejects_unknown_videos_and_ignores_order() {
    let gt = [sub(&[("a", &[(0.0, 2.0, "x"), (3.0, 5.0, "y")])])];
    let bad = sub(&[("zzz", &[(0.0, 1.0, "x")])]);
    assert!(matches!(detection_pr(&bad, &gt, &DETECTION_THRESHOLDS), Err(crate::Error::UnknownVideo(_))));
    let p1 = sub(&[("a", &[(0.0, 1.5, "x"), (2.5, 5.0, "y"), (6.0, 7.0, "q")])]);
    let p2 = sub(&[("a", &[(6.0, 7.0, "q"), (2.5, 5.0, "y"), (0.0, 1.5, "x")])]);
    assert_eq!(
        detection_pr(&p1, &gt, &DETECTION_THRESHOLDS).unwrap(),
        detection_pr(&p2, &gt, &DETECTION_THRESHOLDS).unwrap()
    );
}

#[test]
fn detection_takes_best_reference_set() {
    let a = sub(&[("v", &[(0.0, 2.0, "x")])]);
    let b = sub(&[("v", &[(5.0, 6.0, "x")])]);
    let pred = sub(&[("v", &[(5.0, 6.0, "x")])]);
    let r = detection_pr(&pred, &[a, b], &[0.5]).unwrap();
    assert_eq!((r.avg_recall, r.avg_precision), (100.0, 100.0));
}

#[test]
fn self_tiou_extremes() {
    let same = sub(&[("a", &[(1.0, 3.0, "x"), (1.0, 3.0, "x"), (1.0, 3.0, "y")])]);
    assert_eq!(self_tiou(&same), 1.0);
    let disjoint = sub(&[("a", &[(0.0, 1.0, "x"), (1.0, 2.0, "y")]), ("b", &[(0.0, 1.0, "x")])]);
    assert_eq!(self_tiou(&disjoint), 0.0);
    let half = sub(&[("a", &[(0.0, 2.0, "x"), (1.0, 3.0, "y")]), ("b", &[])]);
    assert!((self_tiou(&half) - 1.0 / 6.0).abs() < 1e-12);
}

#[test]
fn sliding_windows_cover_the_video_evenly() {
    let w = sliding_windows(100.0, 10, 0.3);
    assert_eq!(w.len(), 10);
    assert_eq!((w[0].start(), w[9].end()), (0.0, 100.0));
    assert!(w.iter().all(|p| (p.end() - p.start() - 30.0).abs() < 1e-9));
    // neighbours one, two and three strides apart overlap; pair tIoUs by hand
    let x = 70.0 / 9.0;
    let t = |k: f64| (30.0 - k * x) / (30.0 + k * x);
    let want = (9.0 * t(1.0) + 8.0 * t(2.0) + 7.0 * t(3.0)) / 45.0;
    assert!((video_self_tiou(&w) - want).abs() < 1e-12);
    assert_eq!(sliding_windows(10.0, 1, 0.5)[0].end(), 5.0);
}

#[test]
fn identical_sentence_scores_one() {
    let c = toks("A man is slicing bread on the table.");
    assert!((bleu4(&c, &[c.clone()]) - 1.0).abs() < 1e-12);
    assert!((meteor_lite(&c, &[c.clone()]) - 1.0).abs() < 1e-12);
    assert_eq!(meteor_lite(&c, &[toks("dogs run fast")]), 0.0);
    assert_eq!(bleu4(&[], &[c.clone()]), 0.0);
    assert_eq!(meteor_lite(&[], &[c]), 0.0);
}

#[test]
fn meteor_lite_hand_example() {
    // 4 matches, 2 chunks: P=1, R=0.8
    let s = meteor_lite(&toks("a b c d"), &[toks("a b x c d")]);
    let fmean = 10.0 * 0.8 / (0.8 + 9.0);
    let want = fmean * (1.0 - 0.5 / 27.0);
    assert!((s - want).abs() < 1e-12);
}

#[test]
fn bleu_hand_example() {
    // 5 vs 6 tokens; p1=4/5, p2=3/4, p3=2/3, p4=1/2
    let c = toks("the cat sat on mat");
    let r = toks("the cat sat on the rug");
    let want2 = libm::exp(1.0 - 6.0 / 5.0) * libm::pow(0.8 * 0.75 * (2.0 / 3.0) * 0.5, 0.25);
    let got = bleu4(&c, &[r]);
    assert!((got - want2).abs() < 1e-12, "{got} vs {want2}");
}

#[test]
fn cider_identical_is_one_and_unrelated_zero() {
    let docs = vec![vec![toks("a man slices bread")], vec![toks("a woman plays the violin")], vec![toks("dogs swim")]];
    let c = CiderScorer::new(docs.iter().map(Vec::as_slice));
    assert!((c.score(&toks("a man slices bread"), &docs[0]) - 1.0).abs() < 1e-12);
    assert_eq!(c.score(&toks("cats sleep"), &docs[0]), 0.0);
}

#[test]
fn captioning_perfect_and_duplicate_first() {
    let gt = sub(&[
        ("a", &[(0.0, 2.0, "a man slices bread"), (3.0, 5.0, "he eats the bread slowly")]),
        ("b", &[(1.0, 4.0, "a woman plays the violin")]),
    ]);
    let refs = [gt.clone()];
    let s = captioning_at_tiou(&gt, &refs, CAPTION_TIOU).unwrap();
    assert!((s.meteor_lite - 1.0).abs() < 1e-12);
    assert!((s.bleu4 - 1.0).abs() < 1e-12);
    assert!((s.cider - 1.0).abs() < 1e-12);

    let weak = sub(&[("a", &[(0.0, 2.0, "a man slices bread"), (3.0, 5.0, "someone walks")])]);
    let dup = sub(&[("a", &[(0.0, 2.0, "a man slices bread"), (0.0, 2.0, "a man slices bread"), (3.0, 5.0, "someone walks")])]);
    let w = captioning_at_tiou(&weak, &refs, CAPTION_TIOU).unwrap();
    let d = captioning_at_tiou(&dup, &refs, CAPTION_TIOU).unwrap();
    assert!(d.meteor_lite > w.meteor_lite);
}

#[test]
fn captioning_hand_two_videos() {
    let refs = [sub(&[("a", &[(0.0, 2.0, "a b c d")]), ("b", &[(0.0, 4.0, "x y")])])];
    // video a: one exact hit (1.0) and one miss (0); video b: one hit with meteor 1
    let s = sub(&[("a", &[(0.0, 2.0, "a b c d"), (5.0, 6.0, "a b c d")]), ("b", &[(0.0, 4.0, "x y")])]);
    let r = captioning_at_tiou(&s, &refs, 0.9).unwrap();
    assert!((r.meteor_lite - (0.5 + 1.0) / 2.0).abs() < 1e-12);
}

#[test]
fn dp_prefers_non_crossing_sum() {
    // the crossing pairs (0,1)+(1,0) would give 1.8; the diagonal gives 1.0
    let grid = [0.5, 0.9, 0.9, 0.5];
    assert!((order_preserving_max(&grid, 2, 2) - 1.0).abs() < 1e-12);
    let grid = [0.2, 0.9, 0.9, 0.2];
    assert!((order_preserving_max(&grid, 2, 2) - 0.9).abs() < 1e-12);
    assert_eq!(order_preserving_max(&[], 0, 3), 0.0);
}

#[test]
fn soda_single_pair_and_duplicate() {
    let refs = [sub(&[("a", &[(0.0, 2.0, "a b c d")])])];
    let g = sub(&[("a", &[(0.0, 2.0, "a b x c d")])]);
    let m = meteor_lite(&toks("a b x c d"), &[toks("a b c d")]);
    let r = soda(&g, &refs, InnerMetric::MeteorLite, SodaMode::Old).unwrap();
    assert!((r.precision - m).abs() < 1e-12 && (r.recall - m).abs() < 1e-12 && (r.f1 - m).abs() < 1e-12);
    let dup = sub(&[("a", &[(0.0, 2.0, "a b x c d"), (0.0, 2.0, "a b x c d")])]);
    let d = soda(&dup, &refs, InnerMetric::MeteorLite, SodaMode::Old).unwrap();
    assert!(d.precision < r.precision && d.f1 < r.f1);
    let empty = soda(&Submission::new(), &refs, InnerMetric::MeteorLite, SodaMode::Mr).unwrap();
    assert_eq!(empty.f1, 0.0);
}

#[test]
fn soda_mr_equals_old_with_one_reference_set() {
    let refs = [sub(&[("a", &[(0.0, 2.0, "a man cuts"), (2.0, 5.0, "he eats bread")]), ("b", &[(0.0, 1.0, "go")])])];
    let g = sub(&[("a", &[(0.0, 2.5, "a man eats"), (2.0, 4.0, "he eats")])]);
    for inner in [InnerMetric::MeteorLite, InnerMetric::Cider] {
        let old = soda(&g, &refs, inner, SodaMode::Old).unwrap();
        let mr = soda(&g, &refs, inner, SodaMode::Mr).unwrap();
        assert_eq!(old.per_video, mr.per_video);
    }
}
