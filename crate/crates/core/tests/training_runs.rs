use amfusion::dataio::ImagePair;
use amfusion::losses::SsimConfig;
use amfusion::nn::{ArchConfig, ModelParams};
use amfusion::synthetic::training_pairs;
use amfusion::tensor::Tensor;
use amfusion::training::{loss_and_grads, train, TrainConfig};

fn tiny() -> TrainConfig {
    TrainConfig {
        arch: ArchConfig { base_channels: 2, ca_reduction: 2, image_side: 24, attention: true },
        ssim: SsimConfig { scales: 2, ..SsimConfig::toy() },
        batch_size: 2,
        iterations: 6,
        seed: 3,
        ..TrainConfig::toy()
    }
}

#[test]
fn zero_learning_rate_keeps_the_trace_flat() {
    let mut cfg = tiny();
    cfg.adam.learning_rate = 0.0;
    let img = training_pairs(1, 24, 9).unwrap().remove(0).vis;
    let pair = ImagePair::new("same", img.clone(), img).unwrap();
    let run = train(&[pair], &cfg).unwrap();
    let first = run.trace[0];
    for r in &run.trace {
        assert_eq!(r.total.to_bits(), first.total.to_bits(), "iteration {}", r.iter);
    }
    let init = ModelParams::<f32>::init(cfg.arch, cfg.seed).unwrap();
    for ((name, a), (_, b)) in init.iter().zip(run.params.iter()) {
        if ModelParams::<f32>::is_trainable(name) {
            assert_eq!(a, b, "{name} moved");
        }
    }
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let cfg = tiny();
    let pairs = training_pairs(3, 24, 1).unwrap();
    let a = train(&pairs, &cfg).unwrap();
    let b = train(&pairs, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.params, b.params);
    let c = train(&pairs, &TrainConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn logged_total_is_the_weighted_sum() {
    let cfg = tiny();
    let run = train(&training_pairs(2, 24, 5).unwrap(), &cfg).unwrap();
    let w = cfg.weights;
    for r in &run.trace {
        let sum = w.alpha1 * r.pixel + w.alpha2 * r.ssim + w.alpha3 * r.msl1 + w.alpha4 * r.grad;
        assert!((sum - r.total).abs() <= 1e-5, "iteration {}: {sum} vs {}", r.iter, r.total);
    }
}

#[test]
fn probe_gradient_matches_finite_difference() {
    let cfg = tiny();
    let pairs = training_pairs(1, 24, 2).unwrap();
    let batch = Tensor::new(&[2, 1, 24, 24], [pairs[0].ir.data(), pairs[0].vis.data()].concat()).unwrap();
    let params = ModelParams::<f32>::init(cfg.arch, 0).unwrap();
    let (_, grads) = loss_and_grads(&mut params.clone(), &batch, &cfg, 0).unwrap();
    let loss_at = |delta: f32| {
        let mut p = params.clone();
        let mut b = p.get("dec.conv5.b").unwrap().clone();
        b.data_mut()[0] += delta;
        p.set("dec.conv5.b", b).unwrap();
        loss_and_grads(&mut p, &batch, &cfg, 0).unwrap().0.total
    };
    let h = 1e-2;
    let numeric = (loss_at(h) - loss_at(-h)) / (2.0 * h as f64);
    let analytic = grads["dec.conv5.b"].data()[0] as f64;
    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
    assert!(rel < 1e-2, "analytic {analytic} numeric {numeric}");
}

#[test]
fn checkpoint_is_written_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.amfw");
    let cfg = TrainConfig { checkpoint: Some(path.clone()), checkpoint_interval: 2, ..tiny() };
    let run = train(&training_pairs(2, 24, 7).unwrap(), &cfg).unwrap();
    let back = amfusion::nn::load_weights(&path, cfg.arch).unwrap();
    assert_eq!(back, run.params);
}
