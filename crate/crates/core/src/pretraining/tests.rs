use alloc::string::ToString;
use alloc::vec;

use rand::{RngCore, SeedableRng};

use super::*;
use crate::model::ModelConfig;
use crate::numerics::Tensor;

struct ZeroRng;

impl RngCore for ZeroRng {
    fn next_u32(&mut self) -> u32 {
        0
    }
    fn next_u64(&mut self) -> u64 {
        0
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        dst.fill(0);
    }
}

fn config() -> ModelConfig {
    ModelConfig {
        hidden: 16,
        heads: 2,
        cross_layers: 1,
        max_frames: 8,
        feature_dim: 5,
        vocab_size: 16,
        max_text_len: 10,
        max_events: 4,
        ..ModelConfig::default()
    }
}

pub(crate) fn tiny_corpus() -> Vec<EncodedVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    (0..3)
        .map(|i| {
            let n = 6 + i;
            let data = (0..n * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
            EncodedVideo {
                video_id: alloc::format!("v{i}"),
                duration: n as f64,
                features: Tensor::matrix(n, 5, data).unwrap(),
                events: vec![EventVector::run(n, 0, 1), EventVector::run(n, 2, n - 1)],
                captions: vec![vec![5, 6 + i as u32, 7], vec![8, 9, 10 + i as u32]],
                mefm_allowed: i != 2,
            }
        })
        .collect()
}

#[test]
fn forced_selection_on_first_branch_masks_everything() {
    let out = mask_text(&[5, 6, 7, 8], 16, 1.0, &mut ZeroRng).unwrap();
    assert_eq!(out.input, vec![MASK; 4]);
    assert_eq!(out.positions, vec![0, 1, 2, 3]);
    assert_eq!(out.targets, vec![5, 6, 7, 8]);
    assert!(matches!(mask_text(&[], 16, 0.15, &mut ZeroRng), Err(Error::EmptyCaption)));
}

#[test]
fn selection_rate_is_close_to_probability() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tokens: Vec<u32> = (0..20_000).map(|i| 5 + (i % 10)).collect();
    let out = mask_text(&tokens, 16, 0.15, &mut rng).unwrap();
    let rate = out.positions.len() as f64 / tokens.len() as f64;
    assert!((rate - 0.15).abs() < 0.01, "{rate}");
    for (p, b) in out.positions.iter().zip(&out.branches) {
        match b {
            MaskBranch::Mask => assert_eq!(out.input[*p], MASK),
            MaskBranch::Keep => assert_eq!(out.input[*p], tokens[*p]),
            MaskBranch::Random => assert!(out.input[*p] >= NUM_SPECIAL && out.input[*p] < 16),
        }
    }
}

#[test]
fn frame_masking_stays_inside_the_event() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let e = EventVector::run(20, 5, 12);
    for _ in 0..200 {
        let m = mask_video_frames(20, &e, 0.15, &mut rng).unwrap();
        assert!(!m.is_empty());
        assert!(m.iter().all(|&t| (5..=12).contains(&t)));
    }
    assert_eq!(mask_video_frames(20, &EventVector::run(20, 7, 7), 0.15, &mut rng).unwrap(), vec![7]);
    assert!(mask_video_frames(19, &e, 0.15, &mut rng).is_err());
    assert_eq!(mask_events(1, 0.15, &mut rng).unwrap(), vec![0]);
    assert!(matches!(mask_events(0, 0.15, &mut rng), Err(Error::EmptySequence)));
}

#[test]
fn closed_form_losses() {
    let mut g = Graph::new();
    let logits = g.variable(Tensor::zeros(1, 100));
    let l = g.cross_entropy(logits, &[7], 1.0);
    assert!((g.value(l).item() - libm::log(100.0)).abs() < 1e-12);

    let pred = g.variable(Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]).unwrap());
    let l = g.squared_error(pred, &[0.0, 0.0, 0.0], 1.0);
    assert_eq!(g.value(l).item(), 1.0);

    let e = EventVector::run(10, 2, 4);
    let (t, w) = event_target(Some(&e), 10, 12, false);
    assert_eq!(w.iter().sum::<f64>(), 11.0);
    assert_eq!(t[12], 0.0);
    let logits = g.variable(Tensor::zeros(1, 13));
    let l = g.bce_with_logits(logits, &t, &w, 1.0);
    assert!((g.value(l).item() - 11.0 * core::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn batch_kind_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert!((0..1000).all(|_| sample_batch_kind(1.0, &mut rng) == BatchKind::Three));
    assert!((0..1000).all(|_| sample_batch_kind(0.0, &mut rng) == BatchKind::Two));
}

#[test]
fn three_batches_skip_the_event_head_and_two_batches_skip_words() {
    let corpus = tiny_corpus();
    let model = Model::new(ModelConfig { tie_mlm: false, ..config() }, 1).unwrap();
    let three = TrainConfig { lambda: 1.0, batch_size: 2, ..TrainConfig::default() };
    let out = pretrain_step(&model, &corpus, &three, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let head = model.event_head();
    assert!(out.grads.get(head.weight).is_none());
    assert!(out.losses.iter().any(|l| l.0 == Task::Mlm));

    let two = TrainConfig { lambda: 0.0, batch_size: 2, ..TrainConfig::default() };
    let out = pretrain_step(&model, &corpus, &two, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert!(out.grads.get(model.word_embeddings()).is_none());
    assert!(out.grads.get(head.weight).is_some());
    assert_eq!(out.losses[0].0, Task::Mefm);
}

#[test]
fn losses_at_initialisation_are_bounded() {
    let corpus = tiny_corpus();
    let model = Model::new(config(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = three_sample(&corpus, 0, 1, 16, 0.15, &mut rng).unwrap();
    let mut g = Graph::new();
    let (mlm, mvfr) = three_losses(&model, &mut g, &corpus[0], &s, s.text_positions.len() as f64, s.frames.len() as f64, None).unwrap();
    let mlm = g.value(mlm).item();
    assert!(mlm >= 0.0 && g.value(mvfr).item() >= 0.0);
    // tied small-scale embeddings keep logits near uniform
    assert!(mlm < libm::log(16.0) + 0.5, "{mlm}");
}

#[test]
fn zero_lambda_leaves_untied_text_parameters_alone() {
    let corpus = tiny_corpus();
    let mut model = Model::new(ModelConfig { tie_mlm: false, ..config() }, 3).unwrap();
    let before = model.params.clone();
    let cfg = TrainConfig { lambda: 0.0, steps: 5, batch_size: 2, ..TrainConfig::default() };
    pretrain(&mut model, &corpus, &cfg, 7, |_, _| Ok(())).unwrap();
    for id in model.text_only_params() {
        assert_eq!(model.params.get(id), before.get(id), "{}", model.params.name(id).to_string());
    }
    let moved = model.params.ids().any(|id| model.params.get(id) != before.get(id));
    assert!(moved);
}

#[test]
fn same_seed_same_curve_and_losses_fall() {
    let corpus = tiny_corpus();
    let cfg = TrainConfig { lambda: 1.0, steps: 60, batch_size: 4, lr: 3e-3, ..TrainConfig::default() };
    let run = || {
        let mut m = Model::new(config(), 4).unwrap();
        pretrain(&mut m, &corpus, &cfg, 11, |_, _| Ok(())).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    let early = train::mean_loss(&a, Task::Mlm, 0..10).unwrap();
    let late = train::mean_loss(&a, Task::Mlm, 50..60).unwrap();
    assert!(late < early, "{early} -> {late}");
}
