use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn small() -> ModelConfig {
    ModelConfig {
        hidden: 16,
        heads: 2,
        cross_layers: 2,
        max_frames: 10,
        feature_dim: 6,
        vocab_size: 20,
        max_text_len: 10,
        max_events: 4,
        ..ModelConfig::default()
    }
}

fn features(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn ev(n: usize, a: usize, b: usize) -> EventInput {
    EventInput::Vector(EventVector::run(n, a, b))
}

fn joint(model: &Model, input: &ModelInput<'_>, mask: &AttentionMask) -> Tensor {
    let mut g = Graph::new();
    let h = model.forward(&mut g, input, mask, None).unwrap();
    g.value(h).clone()
}

fn rows(t: &Tensor, range: core::ops::Range<usize>) -> Vec<f64> {
    range.flat_map(|r| t.row(r).to_vec()).collect()
}

#[test]
fn zero_frame_embeds_to_bias_plus_mode_plus_position() {
    let model = Model::new(small(), 1).unwrap();
    let video = Tensor::zeros(3, 6);
    let input = ModelInput { video: &video, events: &[], text: None };
    let mut g = Graph::new();
    let s = model.embed_streams(&mut g, &input).unwrap();
    let p = &model.params;
    let bias = p.get(p.id("embed.video.proj.bias").unwrap());
    let mode = p.get(p.id("embed.video.mode").unwrap());
    let pos = p.get(p.id("embed.video.pos").unwrap());
    for r in 0..3 {
        for c in 0..16 {
            let want = bias.get(0, c) + mode.get(0, c) + pos.get(r, c);
            assert!((g.value(s.video).get(r, c) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn repeated_event_gets_distinct_rows() {
    let model = Model::new(small(), 2).unwrap();
    let video = features(5, 6, 0);
    let events = [ev(5, 1, 2), ev(5, 1, 2)];
    let input = ModelInput { video: &video, events: &events, text: None };
    let mut g = Graph::new();
    let s = model.embed_streams(&mut g, &input).unwrap();
    assert_ne!(g.value(s.events).row(1), g.value(s.events).row(2));
}

#[test]
fn joint_length_counts_the_start_sentinel() {
    let cfg = ModelConfig { max_frames: 32, max_events: 4, max_text_len: 16, ..ModelConfig::default() };
    let model = Model::new(cfg, 3).unwrap();
    let video = features(32, 16, 1);
    let events = [ev(32, 0, 3), ev(32, 4, 9), ev(32, 10, 31)];
    let text: Vec<u32> = (0..12).map(|i| 5 + i).collect();
    let input = ModelInput { video: &video, events: &events, text: Some(&text) };
    let layout = input.layout();
    assert_eq!(layout.len(), 32 + 1 + 3 + 12);
    let out = joint(&model, &input, &build_base_mask(&layout));
    assert_eq!(out.shape(), &[48, 64]);
}

#[test]
fn overflow_and_dim_errors() {
    let model = Model::new(small(), 4).unwrap();
    let wide = features(3, 7, 0);
    let input = ModelInput { video: &wide, events: &[], text: None };
    assert!(matches!(model.embed_streams(&mut Graph::new(), &input), Err(Error::ShapeMismatch(_))));
    let long = features(11, 6, 0);
    let input = ModelInput { video: &long, events: &[], text: None };
    assert!(matches!(model.embed_streams(&mut Graph::new(), &input), Err(Error::Overflow { .. })));
    let video = features(3, 6, 0);
    let text = [1u32; 11];
    let input = ModelInput { video: &video, events: &[], text: Some(&text) };
    assert!(matches!(model.embed_streams(&mut Graph::new(), &input), Err(Error::Overflow { .. })));
    let events = vec![EventInput::Masked; 6];
    let input = ModelInput { video: &video, events: &events, text: None };
    assert!(matches!(model.embed_streams(&mut Graph::new(), &input), Err(Error::Overflow { .. })));
}

#[test]
fn caption_mask_hides_other_events_exactly() {
    let model = Model::new(small(), 5).unwrap();
    let video = features(8, 6, 2);
    let text = [1u32, 7, 9, 3];
    let a = [ev(8, 0, 1), ev(8, 2, 4), ev(8, 5, 7)];
    let b = [ev(8, 3, 7), ev(8, 2, 4), EventInput::Masked];
    let la = ModelInput { video: &video, events: &a, text: Some(&text) };
    let lb = ModelInput { video: &video, events: &b, text: Some(&text) };
    let mask = build_caption_mask(&la.layout(), 1).unwrap();
    let ya = joint(&model, &la, &mask);
    let yb = joint(&model, &lb, &mask);
    let t = la.layout().text();
    assert_eq!(rows(&ya, t.clone()), rows(&yb, t));
    assert_eq!(rows(&ya, la.layout().video()), rows(&yb, la.layout().video()));
}

#[test]
fn caption_loss_gradient_misses_other_events() {
    let model = Model::new(small(), 6).unwrap();
    let video = features(8, 6, 3);
    let text = [1u32, 7, 3, 9];
    let events = [ev(8, 0, 1), ev(8, 2, 4), ev(8, 5, 7)];
    let input = ModelInput { video: &video, events: &events, text: Some(&text) };
    let layout = input.layout();
    let mask = build_caption_mask(&layout, 0).unwrap();
    let mut g = Graph::new();
    let mut s = model.embed_streams(&mut g, &input).unwrap();
    let events = g.value(s.events).clone();
    s.events = g.variable(events);
    let h = model.encode(&mut g, &s, &mask, None).unwrap();
    let t = g.slice_rows(h, layout.text_pos(0), layout.text);
    let logits = model.mlm_logits(&mut g, t);
    let loss = g.cross_entropy(logits, &[7, 3, 9, 2], 4.0);
    g.backward(loss).unwrap();
    let grad = g.grad(s.events).unwrap();
    let h = small().hidden;
    // row 0 is the sentinel, row 1 the current event
    assert!(grad[h..2 * h].iter().any(|&x| x != 0.0));
    assert!(grad[2 * h..].iter().all(|&x| x == 0.0));
}

#[test]
fn causal_text_positions_ignore_the_future() {
    let model = Model::new(small(), 7).unwrap();
    let video = features(6, 6, 4);
    let events = [ev(6, 1, 3)];
    let a = [1u32, 8, 9, 10, 11];
    let b = [1u32, 8, 9, 15, 3];
    let ia = ModelInput { video: &video, events: &events, text: Some(&a) };
    let ib = ModelInput { video: &video, events: &events, text: Some(&b) };
    let layout = ia.layout();
    let mask = build_causal_mask(&layout, Stream::Text);
    let ya = joint(&model, &ia, &mask);
    let yb = joint(&model, &ib, &mask);
    let upto = layout.text_pos(0)..layout.text_pos(3);
    assert_eq!(rows(&ya, upto.clone()), rows(&yb, upto));
    assert_ne!(ya.row(layout.text_pos(3)), yb.row(layout.text_pos(3)));
    assert_eq!(rows(&ya, 0..layout.text_pos(0)), rows(&yb, 0..layout.text_pos(0)));
}

#[test]
fn causal_event_positions_ignore_the_future() {
    let model = Model::new(small(), 8).unwrap();
    let video = features(9, 6, 5);
    let a = [ev(9, 0, 2), ev(9, 3, 4), ev(9, 5, 8)];
    let b = [ev(9, 0, 2), ev(9, 3, 4), ev(9, 1, 1)];
    let ia = ModelInput { video: &video, events: &a, text: None };
    let ib = ModelInput { video: &video, events: &b, text: None };
    let layout = ia.layout();
    let mask = build_causal_mask(&layout, Stream::Event);
    let ya = joint(&model, &ia, &mask);
    let yb = joint(&model, &ib, &mask);
    let upto = 0..layout.event_slot(2);
    assert_eq!(rows(&ya, upto.clone()), rows(&yb, upto));
}

#[test]
fn block_diagonal_mask_separates_modalities() {
    let model = Model::new(small(), 9).unwrap();
    let video = features(5, 6, 6);
    let events = [ev(5, 0, 4)];
    let a = [1u32, 6, 7];
    let b = [1u32, 12, 13];
    let ia = ModelInput { video: &video, events: &events, text: Some(&a) };
    let ib = ModelInput { video: &video, events: &events, text: Some(&b) };
    let layout = ia.layout();
    let mut mask = AttentionMask::empty(layout.len());
    for r in [layout.video(), layout.events(), layout.text()] {
        mask.set_block(r.clone(), r, true);
    }
    let ya = joint(&model, &ia, &mask);
    let yb = joint(&model, &ib, &mask);
    let before_text = 0..layout.text_pos(0);
    assert_eq!(rows(&ya, before_text.clone()), rows(&yb, before_text));
}

#[test]
fn zero_cross_layers_is_identity_over_single_modal_outputs() {
    let cfg = ModelConfig { cross_layers: 0, ..small() };
    let model = Model::new(cfg, 10).unwrap();
    let v1 = features(5, 6, 7);
    let v2 = features(5, 6, 8);
    let events = [ev(5, 0, 4)];
    let text = [1u32, 6, 7];
    let ia = ModelInput { video: &v1, events: &events, text: Some(&text) };
    let ib = ModelInput { video: &v2, events: &events, text: Some(&text) };
    let mask = build_base_mask(&ia.layout());
    let ya = joint(&model, &ia, &mask);
    let yb = joint(&model, &ib, &mask);
    let rest = ia.layout().events().start..ia.layout().len();
    assert_eq!(rows(&ya, rest.clone()), rows(&yb, rest));
    assert_ne!(ya.row(0), yb.row(0));
}

#[test]
fn mvfr_head_shares_the_video_projection() {
    let mut model = Model::new(small(), 11).unwrap();
    let mut g = Graph::new();
    let zero = g.constant(Tensor::zeros(1, 16));
    let out = model.mvfr_predict(&mut g, zero);
    let bias = model.params.get(model.params.id("head.mvfr.bias").unwrap());
    assert_eq!(g.value(out).data(), bias.data());

    let mut g = Graph::new();
    let h = g.constant(Tensor::filled(1, 16, 0.3));
    let out = model.mvfr_predict(&mut g, h);
    let before = g.value(out).clone();
    let loss = g.squared_error(out, &[1.0; 6], 1.0);
    let grads = g.param_grads(loss, &model.params).unwrap();
    let w = model.video_projection_weight();
    assert!(grads.get(w).unwrap().data().iter().any(|&x| x != 0.0));

    model.params.get_mut(w).data_mut()[0] += 1.0;
    let mut g = Graph::new();
    let h = g.constant(Tensor::filled(1, 16, 0.3));
    let out = model.mvfr_predict(&mut g, h);
    assert_ne!(g.value(out), &before);
}

#[test]
fn heads_have_expected_widths_and_tying_switch() {
    let tied = Model::new(small(), 12).unwrap();
    let untied = Model::new(ModelConfig { tie_mlm: false, ..small() }, 12).unwrap();
    assert!(untied.params.id("head.mlm.weight").is_some());
    assert!(tied.params.id("head.mlm.weight").is_none());
    let run = |m: &Model| {
        let mut g = Graph::new();
        let h = g.constant(Tensor::filled(2, 16, 0.5));
        let a = m.mlm_logits(&mut g, h);
        let e = m.event_logits(&mut g, h);
        (g.value(a).clone(), g.value(e).clone())
    };
    let (a, e) = run(&tied);
    let (b, _) = run(&untied);
    assert_eq!(a.shape(), &[2, 20]);
    assert_eq!(a.row(0), a.row(1));
    assert_ne!(a, b);
    assert_eq!(e.shape(), &[2, 11]);
}

#[test]
fn same_seed_same_parameters() {
    let a = Model::new(small(), 13).unwrap();
    let b = Model::new(small(), 13).unwrap();
    let c = Model::new(small(), 14).unwrap();
    assert!(a.params.iter().zip(b.params.iter()).all(|(x, y)| x == y));
    assert!(a.params.iter().zip(c.params.iter()).any(|(x, y)| x != y));
    let loaded = Model::from_params(small(), &a.params).unwrap();
    assert!(a.params.iter().zip(loaded.params.iter()).all(|(x, y)| x == y));
}
