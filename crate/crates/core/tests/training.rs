use std::time::Instant;

use mn_autodiff::OpKind;
use mn_core::contrastive::{model_gradcheck, train, TrainConfig, Trainer};
use mn_core::encoder::{embed, ComMode, EncoderConfig, EncoderParams, PoolMode};
use mn_core::fixtures::toy_graph;
use mn_core::graph::MetaNodeSample;
use mn_core::io::{generate_synthetic, AuxType, SyntheticSpec};

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 5e-3,
        max_epochs: epochs,
        patience: epochs,
        seed: 3,
        encoder: EncoderConfig { dim: 8, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let g = toy_graph(1);
    let start = Instant::now();
    for com in [ComMode::Sum, ComMode::Concat] {
        for pool in [PoolMode::Sum, PoolMode::Mean, PoolMode::Max] {
            for use_meta_node in [true, false] {
                let cfg = EncoderConfig { dim: 4, num_layers: 2, com, pool, use_meta_node, r: 70.0, ..Default::default() };
                let p = EncoderParams::init(&g, &cfg, 11).unwrap();
                let r = model_gradcheck(&g, &p, &cfg, 5, None).unwrap();
                assert!(r.max_rel_error < 1e-4, "{cfg:?}: {r:?}");
                assert_eq!(r.checked, p.store().iter().map(|p| p.value.as_slice().len()).sum::<usize>());
            }
        }
    }
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn broken_backward_is_caught() {
    let g = toy_graph(1);
    let cfg = EncoderConfig { dim: 4, ..Default::default() };
    let p = EncoderParams::init(&g, &cfg, 11).unwrap();
    for op in [OpKind::Tanh, OpKind::SegmentSum, OpKind::MatMul, OpKind::LogSigmoid] {
        let r = model_gradcheck(&g, &p, &cfg, 5, Some(op)).unwrap();
        assert!(r.max_rel_error > 1e-2, "{op}: {r:?}");
    }
}

#[test]
fn one_epoch_is_one_update() {
    let g = toy_graph(2);
    let r = train(&g, &small_cfg(1)).unwrap();
    assert_eq!(r.loss_history.len(), 1);
    let mut t = Trainer::new(&g, small_cfg(1)).unwrap();
    t.step().unwrap();
    assert!(t.should_stop() || t.epoch() == 1);
    assert_eq!(t.params().store().step_count(), 1);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let g = toy_graph(2);
    let cfg = TrainConfig { lr: 0.0, weight_decay: 0.1, ..small_cfg(5) };
    let mut t = Trainer::new(&g, cfg.clone()).unwrap();
    let before: Vec<_> = t.params().store().iter().map(|p| p.value.clone()).collect();
    for _ in 0..5 {
        t.step().unwrap();
    }
    let after: Vec<_> = t.params().store().iter().map(|p| p.value.clone()).collect();
    assert_eq!(before, after);
}

#[test]
fn training_is_deterministic() {
    let g = toy_graph(3);
    let cfg = small_cfg(30);
    let a = train(&g, &cfg).unwrap();
    let b = train(&g, &cfg).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.loss_history), bits(&b.loss_history));
    let full = MetaNodeSample::full(&g);
    let ha = embed(&g, &a.final_params, &cfg.encoder, &full).unwrap();
    let hb = embed(&g, &b.final_params, &cfg.encoder, &full).unwrap();
    for (x, y) in ha.iter().zip(&hb) {
        assert_eq!(bits(x.as_slice()), bits(y.as_slice()));
    }
}

#[test]
fn loss_trends_down_on_synthetic_graph() {
    let spec = SyntheticSpec {
        num_classes: 3,
        target_count: 150,
        aux_types: vec![AuxType { count: 60, affinity: 0.9 }],
        feature_dim: 8,
        feature_noise: 0.5,
        edges_per_node: 3,
        seed: 1,
    };
    let g = generate_synthetic(&spec).unwrap().graph;
    let cfg = TrainConfig {
        lr: 1e-3,
        max_epochs: 200,
        patience: 200,
        seed: 1,
        encoder: EncoderConfig { dim: 16, ..Default::default() },
        ..Default::default()
    };
    let r = train(&g, &cfg).unwrap();
    assert_eq!(r.loss_history.len(), 200);
    assert!(r.loss_history.iter().all(|l| l.is_finite()));
    assert!(r.loss_history[199] < r.loss_history[0], "{:?}", &r.loss_history[190..]);
    assert_eq!(r.best_loss, r.loss_history[r.best_epoch]);
}

#[test]
fn early_stopping_on_flat_loss() {
    let g = toy_graph(4);
    let cfg = TrainConfig { lr: 0.0, patience: 3, ..small_cfg(100) };
    let r = train(&g, &cfg).unwrap();
    let n = r.loss_history.len();
    assert!(n < 100);
    assert_eq!(r.best_loss, r.loss_history[r.best_epoch]);
    // the last `patience` epochs never beat the best by more than the threshold
    for l in &r.loss_history[n - 3..] {
        assert!(*l >= r.best_loss - 1e-6);
    }
}

#[test]
fn invalid_configs_rejected() {
    let g = toy_graph(1);
    for cfg in [
        TrainConfig { lr: -1.0, ..small_cfg(5) },
        TrainConfig { patience: 10, ..small_cfg(5) },
        TrainConfig { max_epochs: 0, patience: 0, ..small_cfg(5) },
        TrainConfig { encoder: EncoderConfig { dim: 0, ..Default::default() }, ..small_cfg(5) },
        TrainConfig { encoder: EncoderConfig { r: 0.0, ..Default::default() }, ..small_cfg(5) },
    ] {
        assert!(train(&g, &cfg).is_err());
    }
}
