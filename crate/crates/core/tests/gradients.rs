use evseq_core::corpus::EncodedVideo;
use evseq_core::event_codec::EventVector;
use evseq_core::generation::{ec_loss, ec_sample, ed_loss, EdSample};
use evseq_core::model::{Model, ModelConfig};
use evseq_core::numerics::gradcheck::{primitive_report, store_relative_error};
use evseq_core::numerics::{Graph, Tensor};
use evseq_core::pretraining::{three_losses, three_sample, two_loss, TwoSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> (ModelConfig, EncodedVideo) {
    let config = ModelConfig {
        hidden: 8,
        heads: 2,
        cross_layers: 1,
        max_frames: 6,
        feature_dim: 3,
        vocab_size: 10,
        max_text_len: 7,
        max_events: 3,
        ffn_mult: 2,
        tie_mlm: false,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = (0..18).map(|_| rng.random_range(-2.0..2.0)).collect();
    let video = EncodedVideo {
        video_id: "v".into(),
        duration: 6.0,
        features: Tensor::matrix(6, 3, data).unwrap(),
        events: vec![EventVector::run(6, 0, 2), EventVector::run(6, 3, 5)],
        captions: vec![vec![5, 6, 7], vec![8, 9]],
        mefm_allowed: true,
    };
    (config, video)
}

/// Sum of every training objective on one video, so every head and encoder
/// sees a gradient.
fn total_loss(model: &Model, g: &mut Graph, video: &EncodedVideo) -> evseq_core::numerics::Var {
    let corpus = std::slice::from_ref(video);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let three = three_sample(corpus, 0, 1, 10, 0.5, &mut rng).unwrap();
    let (mlm, mvfr) = three_losses(model, g, video, &three, 1.0, 1.0, None).unwrap();
    let mefm = two_loss(model, g, video, &TwoSample { video: 0, masked: vec![1] }, 1.0, None).unwrap();
    let ed = ed_loss(model, g, video, &EdSample { video: 0, masked: vec![0] }, 2.0).unwrap();
    let ec = ec_loss(model, g, video, &ec_sample(corpus, 0, 0, 0.5, &mut rng).unwrap(), 1.0).unwrap();
    let a = g.add(mlm, mvfr);
    let b = g.add(mefm, ed);
    let c = g.add(a, b);
    g.add(c, ec)
}

#[test]
fn every_primitive_within_tolerance_on_several_draws() {
    for seed in [1, 2, 3] {
        for (name, err) in primitive_report(seed) {
            assert!(err < 1e-3, "seed {seed} {name}: {err}");
        }
    }
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let (config, video) = tiny();
    let model = Model::new(config.clone(), 3).unwrap();
    let mut g = Graph::new();
    let loss = total_loss(&model, &mut g, &video);
    let grads = g.param_grads(loss, &model.params).unwrap();
    let err = store_relative_error(&model.params, &grads, 1e-4, 1e-4, |store| {
        let m = Model::from_params(config.clone(), store).unwrap();
        let mut g = Graph::new();
        let l = total_loss(&m, &mut g, &video);
        g.value(l).item()
    });
    assert!(err < 5e-3, "{err}");
}
