mod common;

use mn_autodiff::{Matrix, Tape};
use mn_core::contrastive::{contrastive_loss, discriminate, summary};
use mn_core::encoder::{
    aggregate_neighbors, encode, meta_node_repr, mn_mpl_layer, project_features, ComMode, Direction, EncoderConfig,
    EncoderParams, PoolMode,
};
use mn_core::fixtures::{random_graph, toy_graph};
use mn_core::graph::{EdgeType, GraphSpec, HeteroGraph, MetaNodeSample, NodeType};
use mn_core::rng::{stream_rng, Stream};
use rand::Rng;

const TOL: f64 = 1e-10;

fn configs() -> Vec<EncoderConfig> {
    let mut out = Vec::new();
    for com in [ComMode::Sum, ComMode::Concat] {
        for pool in [PoolMode::Sum, PoolMode::Mean, PoolMode::Max] {
            for use_meta_node in [true, false] {
                out.push(EncoderConfig {
                    dim: 4,
                    num_layers: 2,
                    com,
                    pool,
                    use_meta_node,
                    use_batch_norm: true,
                    r: 60.0,
                });
            }
        }
    }
    out
}

fn random_rows(seed: u64, n: usize, d: usize) -> Matrix {
    let mut rng = stream_rng(seed, Stream::Synthetic, 900, 0);
    let data = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    Matrix::from_vec(n, d, data).unwrap()
}

#[test]
fn meta_node_pooling_matches_loops() {
    for trial in 0..100u64 {
        let n = 1 + (trial as usize % 10);
        let h = random_rows(trial, n, 3);
        let mut rng = stream_rng(trial, Stream::Synthetic, 901, 0);
        let k = rng.random_range(1..=n);
        let mut members: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
        members.sort_unstable();
        for mode in [PoolMode::Sum, PoolMode::Mean, PoolMode::Max] {
            let mut tape = Tape::new();
            let t = tape.constant(h.clone());
            let out = meta_node_repr(&mut tape, t, &members, mode).unwrap();
            let want = common::pool(&common::rows_of(&h), &members, mode);
            assert!(common::max_rel_diff(&vec![want], tape.value(out)) <= TOL, "trial {trial} {mode}");
        }
    }
}

#[test]
fn pooling_hand_values() {
    let h = Matrix::from_rows(&[[1.0, 4.0], [3.0, 2.0], [0.0, 5.0]]);
    let want = [
        (PoolMode::Sum, [4.0, 11.0]),
        (PoolMode::Mean, [4.0 / 3.0, 11.0 / 3.0]),
        (PoolMode::Max, [3.0, 5.0]),
    ];
    for (mode, w) in want {
        let mut tape = Tape::new();
        let t = tape.constant(h.clone());
        let out = meta_node_repr(&mut tape, t, &[0, 1, 2], mode).unwrap();
        assert_eq!(tape.value(out).as_slice(), &w);
    }
    let mut tape = Tape::new();
    let t = tape.constant(h);
    assert!(meta_node_repr(&mut tape, t, &[], PoolMode::Sum).is_err());
}

#[test]
fn neighbor_aggregation_matches_loops() {
    for trial in 0..100u64 {
        let g = random_graph(trial, 10);
        let cfg = EncoderConfig { dim: 3, ..Default::default() };
        let p = EncoderParams::init(&g, &cfg, trial).unwrap();
        let h: Vec<Matrix> = (0..g.num_node_types())
            .map(|ty| random_rows(trial * 31 + ty as u64, g.node_count(ty), 3))
            .collect();
        let h_rows: Vec<_> = h.iter().map(common::rows_of).collect();
        for et in 0..g.num_edge_types() {
            let name = &g.edge_types()[et].name;
            let w = common::param(&p, &format!("layer0.agg.{name}.weight"));
            let b = common::param(&p, &format!("layer0.agg.{name}.bias"));
            for (dir, reverse) in [(Direction::Forward, false), (Direction::Reverse, true)] {
                let mut tape = Tape::new();
                let bound = p.bind(&mut tape);
                let ht: Vec<_> = h.iter().map(|m| tape.constant(m.clone())).collect();
                let (to, msg) = aggregate_neighbors(&mut tape, &ht, &g, et, dir, &bound.aggregators[0][et]).unwrap();
                let want: Vec<Vec<f64>> = (0..g.node_count(to))
                    .map(|i| common::neighbor_message(&g, &h_rows, et, reverse, i, &w, &b))
                    .collect();
                assert!(common::max_rel_diff(&want, tape.value(msg)) <= TOL, "trial {trial} edge {et}");
            }
        }
    }
}

fn two_type_graph(edges: Vec<(usize, usize)>, fa: Matrix, fb: Matrix) -> HeteroGraph {
    HeteroGraph::build(GraphSpec {
        node_types: vec![
            NodeType { name: "a".into(), count: fa.rows(), feature_dim: fa.cols() },
            NodeType { name: "b".into(), count: fb.rows(), feature_dim: fb.cols() },
        ],
        features: vec![fa, fb],
        edge_types: vec![EdgeType { name: "ab".into(), src: 0, dst: 1 }],
        edges: vec![edges],
    })
    .unwrap()
}

fn identity_aggregator(p: &mut EncoderParams, d: usize) {
    p.set_value("layer0.agg.ab.weight", Matrix::identity(d)).unwrap();
    p.set_value("layer0.agg.ab.bias", Matrix::zeros(1, d)).unwrap();
}

#[test]
fn aggregation_examples() {
    let d = 2;
    let g = two_type_graph(
        vec![(0, 0), (1, 0), (2, 0), (3, 1)],
        Matrix::zeros(4, 1),
        Matrix::zeros(3, 1),
    );
    let cfg = EncoderConfig { dim: d, ..Default::default() };
    let mut p = EncoderParams::init(&g, &cfg, 1).unwrap();
    identity_aggregator(&mut p, d);
    let ha = Matrix::from_rows(&[[1.0, 2.0], [3.0, 5.0], [-1.0, 2.0], [7.0, -7.0]]);
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape);
    let hs = vec![tape.constant(ha), tape.constant(Matrix::zeros(3, d))];
    let (to, msg) = aggregate_neighbors(&mut tape, &hs, &g, 0, Direction::Forward, &bound.aggregators[0][0]).unwrap();
    assert_eq!(to, 1);
    let m = tape.value(msg);
    assert_eq!(m.row(0), &[1.0, 3.0]);
    // single neighbor passes through unchanged
    assert_eq!(m.row(1), &[7.0, -7.0]);
    // no neighbors, zero message even with a bias
    assert_eq!(m.row(2), &[0.0, 0.0]);
    assert!(aggregate_neighbors(&mut tape, &hs, &g, 5, Direction::Forward, &bound.aggregators[0][0]).is_err());
}

#[test]
fn layer_matches_loops() {
    for trial in 0..100u64 {
        let g = random_graph(trial, 10);
        for (ci, cfg) in configs().into_iter().enumerate() {
            if ci % 4 != trial as usize % 4 {
                continue;
            }
            let p = EncoderParams::init(&g, &cfg, trial).unwrap();
            let sample = g.sample_meta_members(cfg.r, trial).unwrap();
            let h: Vec<Matrix> = (0..g.num_node_types())
                .map(|ty| random_rows(trial * 17 + ty as u64, g.node_count(ty), cfg.dim))
                .collect();
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape);
            let ht: Vec<_> = h.iter().map(|m| tape.constant(m.clone())).collect();
            let out = mn_mpl_layer(&mut tape, &ht, &g, &sample, &bound.aggregators[1], &bound.com[1], &cfg).unwrap();
            let want = common::layer(&g, &p, &cfg, &sample, &h.iter().map(common::rows_of).collect::<Vec<_>>(), 1);
            for ty in 0..g.num_node_types() {
                assert!(
                    common::max_rel_diff(&want[ty], tape.value(out[ty])) <= TOL,
                    "trial {trial} cfg {cfg:?}"
                );
            }
        }
    }
}

#[test]
fn projection_and_encoder_match_loops() {
    for trial in 0..20u64 {
        let g = random_graph(trial, 8);
        for cfg in configs() {
            for bn in [true, false] {
                let cfg = EncoderConfig { use_batch_norm: bn, ..cfg.clone() };
                let p = EncoderParams::init(&g, &cfg, trial + 3).unwrap();
                let sample = g.sample_meta_members(cfg.r, trial).unwrap();
                let mut tape = Tape::new();
                let bound = p.bind(&mut tape);
                let h0 = project_features(&mut tape, &g, &bound).unwrap();
                let want0 = common::projection(&g, &p, &cfg);
                let h = encode(&mut tape, &g, &bound, &cfg, &sample).unwrap();
                let want = common::encode(&g, &p, &cfg, &sample);
                for ty in 0..g.num_node_types() {
                    assert!(common::max_rel_diff(&want0[ty], tape.value(h0[ty])) <= TOL);
                    assert!(common::max_rel_diff(&want[ty], tape.value(h[ty])) <= TOL);
                }
            }
        }
    }
}

#[test]
fn projection_examples() {
    let g = two_type_graph(vec![(0, 0)], Matrix::from_rows(&[[0.3, -1.2]]), Matrix::from_rows(&[[2.0]]));
    let cfg = EncoderConfig { dim: 2, use_batch_norm: false, ..Default::default() };
    let mut p = EncoderParams::init(&g, &cfg, 0).unwrap();
    p.set_value("proj.a.weight", Matrix::identity(2)).unwrap();
    p.set_value("proj.b.weight", Matrix::zeros(2, 1)).unwrap();
    let mut tape = Tape::new();
    let bound = p.bind(&mut tape);
    let h = project_features(&mut tape, &g, &bound).unwrap();
    assert_eq!(tape.value(h[0]).as_slice(), &[0.3f64.tanh(), (-1.2f64).tanh()]);
    assert_eq!(tape.value(h[1]).as_slice(), &[0.0, 0.0]);
}

#[test]
fn isolated_nodes_depend_only_on_own_features() {
    // zero edges, no meta-node, sum mode: h' = tanh(W h + b)
    let fa = random_rows(5, 4, 3);
    let g = two_type_graph(vec![], fa.clone(), random_rows(6, 2, 2));
    let cfg = EncoderConfig { dim: 3, num_layers: 1, use_meta_node: false, use_batch_norm: false, ..Default::default() };
    let p = EncoderParams::init(&g, &cfg, 9).unwrap();
    let h = mn_core::embed(&g, &p, &cfg, &MetaNodeSample::full(&g)).unwrap();
    let wc = common::param(&p, "layer0.com.weight");
    let bc = common::param(&p, "layer0.com.bias");
    let wp = common::param(&p, "proj.a.weight");
    let bp = common::param(&p, "proj.a.bias");
    for i in 0..4 {
        let h0: Vec<f64> = common::affine(&wp, &bp, fa.row(i)).into_iter().map(f64::tanh).collect();
        let want: Vec<f64> = common::affine(&wc, &bc, &h0).into_iter().map(f64::tanh).collect();
        for c in 0..3 {
            assert!((want[c] - h[0].get(i, c)).abs() <= 1e-14);
        }
    }
    // changing another node's features leaves node 0 untouched
    let mut fa2 = fa.clone();
    fa2.row_mut(3).copy_from_slice(&[9.0, -9.0, 9.0]);
    let g2 = g.with_features(vec![fa2, g.features(1).clone()]).unwrap();
    let h2 = mn_core::embed(&g2, &p, &cfg, &MetaNodeSample::full(&g2)).unwrap();
    assert_eq!(h[0].row(0), h2[0].row(0));
}

#[test]
fn same_type_nodes_share_meta_vector() {
    // equal rows and mean pooling: meta-node vector equals each row, sum input = 2h + messages
    let g = two_type_graph(vec![], Matrix::filled(3, 2, 0.4), Matrix::filled(2, 2, -0.1));
    let cfg = EncoderConfig { dim: 2, num_layers: 1, pool: PoolMode::Mean, use_batch_norm: false, ..Default::default() };
    let p = EncoderParams::init(&g, &cfg, 2).unwrap();
    let h = mn_core::embed(&g, &p, &cfg, &MetaNodeSample::full(&g)).unwrap();
    let wp = common::param(&p, "proj.a.weight");
    let bp = common::param(&p, "proj.a.bias");
    let h0: Vec<f64> = common::affine(&wp, &bp, &[0.4, 0.4]).into_iter().map(f64::tanh).collect();
    let doubled: Vec<f64> = h0.iter().map(|v| 2.0 * v).collect();
    let want: Vec<f64> = common::affine(&common::param(&p, "layer0.com.weight"), &common::param(&p, "layer0.com.bias"), &doubled)
        .into_iter()
        .map(f64::tanh)
        .collect();
    for i in 0..3 {
        for c in 0..2 {
            assert!((h[0].get(i, c) - want[c]).abs() <= 1e-14);
        }
    }
}

#[test]
fn discriminator_matches_double_loop() {
    for trial in 0..50u64 {
        let d = 1 + trial as usize % 6;
        let h = random_rows(trial, 1, d);
        let s = random_rows(trial + 1000, 1, d);
        let w = random_rows(trial + 2000, d, d);
        let mut logit = 0.0;
        for a in 0..d {
            for b in 0..d {
                logit += h.get(0, a) * w.get(a, b) * s.get(0, b);
            }
        }
        let want = 1.0 / (1.0 + (-logit).exp());
        let got = discriminate(h.row(0), s.row(0), &w).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.max(1e-300), "trial {trial}");
    }
    let e1 = [1.0, 0.0, 0.0];
    assert!((discriminate(&e1, &e1, &Matrix::identity(3)).unwrap() - 0.7310585786300049).abs() < 1e-15);
    assert_eq!(discriminate(&[0.0; 3], &e1, &Matrix::identity(3)).unwrap(), 0.5);
}

#[test]
fn summary_matches_loop() {
    let rows = [random_rows(1, 2, 3), random_rows(2, 1, 3)];
    let mut tape = Tape::new();
    let ts: Vec<_> = rows.iter().map(|m| tape.constant(m.clone())).collect();
    let s = summary(&mut tape, &ts).unwrap();
    for c in 0..3 {
        let mean = (rows[0].get(0, c) + rows[0].get(1, c) + rows[1].get(0, c)) / 3.0;
        let want = 1.0 / (1.0 + (-mean).exp());
        assert!((tape.value(s).get(0, c) - want).abs() < 1e-15);
    }
    let single = tape.constant(Matrix::from_rows(&[[0.0, 1.0]]));
    let s1 = summary(&mut tape, &[single]).unwrap();
    assert_eq!(tape.value(s1).get(0, 0), 0.5);
    assert!(summary(&mut tape, &[]).is_err());
}

fn loss_with_logits(pos: f64, neg: f64) -> f64 {
    // h = [pos], h~ = [neg], s = [0.5]: logits h W s with W = [[2]]
    let mut tape = Tape::new();
    let h = tape.constant(Matrix::from_rows(&[[pos]]));
    let hn = tape.constant(Matrix::from_rows(&[[neg]]));
    let s = tape.constant(Matrix::from_rows(&[[0.5]]));
    let w = tape.constant(Matrix::from_rows(&[[2.0]]));
    let l = contrastive_loss(&mut tape, h, hn, s, w).unwrap();
    tape.scalar(l)
}

#[test]
fn loss_hand_values() {
    // softplus(-1) = ln(1 + e^-1)
    assert!((loss_with_logits(1.0, -1.0) - 0.31326168751822286).abs() < 1e-15);
    assert!(loss_with_logits(10.0, -10.0) < 1e-4);
    assert!(loss_with_logits(1e4, -1e4).is_finite());
    assert!(loss_with_logits(-1e4, 1e4).is_finite());
}

#[test]
fn loss_is_ln2_with_zero_discriminator() {
    let cfgs = configs();
    for trial in 0..30u64 {
        let g = if trial % 3 == 0 { toy_graph(trial) } else { random_graph(trial, 10) };
        let cfg = &cfgs[trial as usize % cfgs.len()];
        let mut p = EncoderParams::init(&g, cfg, trial).unwrap();
        p.set_value("disc.weight", Matrix::zeros(cfg.dim, cfg.dim)).unwrap();
        let (tape, loss) = mn_core::contrastive::epoch_objective(&g, &p, cfg, trial, 0).unwrap();
        assert!((tape.scalar(loss) - std::f64::consts::LN_2).abs() <= 1e-9);
    }
}

#[test]
fn summary_ignores_corrupted_graph() {
    let g = toy_graph(4);
    let cfg = EncoderConfig { dim: 5, ..Default::default() };
    let p = EncoderParams::init(&g, &cfg, 4).unwrap();
    let sample = MetaNodeSample::full(&g);
    let s_of = |graph: &HeteroGraph| {
        let mut tape = Tape::new();
        let bound = p.bind(&mut tape);
        let h = encode(&mut tape, graph, &bound, &cfg, &sample).unwrap();
        let s = summary(&mut tape, &h).unwrap();
        tape.value(s).clone()
    };
    let before = s_of(&g);
    // encoding the corrupted copy must not disturb the summary of the original
    let corrupted = g.corrupt(99);
    assert_ne!(s_of(&corrupted), before);
    assert_eq!(before, s_of(&g));
}
