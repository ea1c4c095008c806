//! Small seeded graphs for tests, gradient checks and benchmarks.

use mn_autodiff::Matrix;
use rand::Rng;

use crate::graph::{EdgeType, GraphSpec, HeteroGraph, NodeType};
use crate::rng::{stream_rng, Stream};

fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// 20 nodes of two types (12 `paper`, 8 `author`) with a `writes`
/// author-to-paper relation and a `cites` paper-to-paper relation. Some nodes
/// are left without neighbors on purpose.
pub fn toy_graph(seed: u64) -> HeteroGraph {
    let mut rng = stream_rng(seed, Stream::Synthetic, 100, 0);
    let features = vec![uniform_matrix(&mut rng, 12, 5), uniform_matrix(&mut rng, 8, 3)];
    let mut writes = Vec::new();
    for a in 0..7 {
        for _ in 0..rng.random_range(1..=3) {
            writes.push((a, rng.random_range(0..10)));
        }
    }
    let mut cites = Vec::new();
    for p in 0..11 {
        if rng.random_bool(0.7) {
            cites.push((p, rng.random_range(0..11)));
        }
    }
    HeteroGraph::build(GraphSpec {
        node_types: vec![
            NodeType { name: "paper".into(), count: 12, feature_dim: 5 },
            NodeType { name: "author".into(), count: 8, feature_dim: 3 },
        ],
        features,
        edge_types: vec![
            EdgeType { name: "writes".into(), src: 1, dst: 0 },
            EdgeType { name: "cites".into(), src: 0, dst: 0 },
        ],
        edges: vec![writes, cites],
    })
    .expect("toy graph is valid")
}

/// Random graph with 2 or 3 node types of 1..=`max_nodes` nodes each and
/// 1..=3 edge types of random endpoints.
pub fn random_graph(seed: u64, max_nodes: usize) -> HeteroGraph {
    let mut rng = stream_rng(seed, Stream::Synthetic, 101, 0);
    let types = rng.random_range(2..=3);
    let node_types: Vec<NodeType> = (0..types)
        .map(|t| NodeType {
            name: format!("t{t}"),
            count: rng.random_range(1..=max_nodes),
            feature_dim: rng.random_range(1..=4),
        })
        .collect();
    let features = node_types
        .iter()
        .map(|t| uniform_matrix(&mut rng, t.count, t.feature_dim))
        .collect();
    let num_edge_types = rng.random_range(1..=3);
    let mut edge_types = Vec::new();
    let mut edges = Vec::new();
    for e in 0..num_edge_types {
        let src = rng.random_range(0..types);
        let dst = rng.random_range(0..types);
        let m = rng.random_range(0..=2 * max_nodes);
        let list = (0..m)
            .map(|_| {
                (
                    rng.random_range(0..node_types[src].count),
                    rng.random_range(0..node_types[dst].count),
                )
            })
            .collect();
        edge_types.push(EdgeType { name: format!("e{e}"), src, dst });
        edges.push(list);
    }
    HeteroGraph::build(GraphSpec {
        node_types,
        features,
        edge_types,
        edges,
    })
    .expect("random graph is valid")
}
