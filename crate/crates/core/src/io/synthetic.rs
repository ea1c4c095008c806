use std::path::Path;

use mn_autodiff::Matrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::graph_dir::{save_graph, Dataset, Labels};
use super::IoError;
use crate::graph::{EdgeType, GraphSpec, HeteroGraph, NodeType};
use crate::rng::{stream_rng, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxType {
    pub count: usize,
    /// Probability that an edge stays inside the target node's community.
    pub affinity: f64,
}

/// Planted-partition heterogeneous graph: one labelled target type linked to
/// auxiliary types whose nodes belong to latent communities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub target_count: usize,
    pub aux_types: Vec<AuxType>,
    pub feature_dim: usize,
    pub feature_noise: f64,
    /// Edges drawn from every target node into every auxiliary type.
    pub edges_per_node: usize,
    pub seed: u64,
}

pub const PRESETS: [&str; 2] = ["synth-easy", "synth-null"];

impl SyntheticSpec {
    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        let affinity = match name {
            "synth-easy" => 0.9,
            "synth-null" => 1.0 / 3.0,
            _ => return None,
        };
        Some(Self {
            num_classes: 3,
            target_count: 1200,
            aux_types: vec![AuxType { count: 400, affinity }, AuxType { count: 600, affinity }],
            feature_dim: 16,
            feature_noise: 0.5,
            edges_per_node: 5,
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let k = self.num_classes;
        let fail = |m: String| Err(IoError::Spec(m));
        if k < 2 {
            return fail(format!("num_classes must be >= 2, got {k}"));
        }
        if self.target_count < k {
            return fail(format!("target_count {} < num_classes {k}", self.target_count));
        }
        if self.feature_dim < k {
            return fail(format!("feature_dim {} < num_classes {k}", self.feature_dim));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return fail("feature_noise must be finite and >= 0".into());
        }
        if self.aux_types.is_empty() {
            return fail("at least one auxiliary type is required".into());
        }
        for (i, a) in self.aux_types.iter().enumerate() {
            if a.count < k {
                return fail(format!("aux type {i} has {} nodes, fewer than {k} communities", a.count));
            }
            if !(0.0..=1.0).contains(&a.affinity) {
                return fail(format!("aux type {i} affinity {} outside [0, 1]", a.affinity));
            }
        }
        Ok(())
    }
}

fn centroid_features(labels: &[usize], dim: usize, noise: &Normal<f64>, rng: &mut impl Rng) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), dim);
    for (i, &c) in labels.iter().enumerate() {
        let row = m.row_mut(i);
        for v in row.iter_mut() {
            *v = noise.sample(rng);
        }
        row[c] += 1.0;
    }
    m
}

/// Builds the graph in memory. Target node `i` has class `i mod K`, auxiliary
/// node `j` belongs to community `j mod K`. For every target node and
/// auxiliary type, `edges_per_node` endpoints are drawn with replacement:
/// from the node's own community with probability `affinity`, otherwise from
/// a uniformly chosen other community.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, IoError> {
    spec.validate()?;
    let k = spec.num_classes;
    let noise = Normal::new(0.0, spec.feature_noise).map_err(|e| IoError::Spec(e.to_string()))?;

    let mut node_types = vec![NodeType {
        name: "target".into(),
        count: spec.target_count,
        feature_dim: spec.feature_dim,
    }];
    let target_labels: Vec<usize> = (0..spec.target_count).map(|i| i % k).collect();
    let mut features = vec![centroid_features(
        &target_labels,
        spec.feature_dim,
        &noise,
        &mut stream_rng(spec.seed, Stream::Synthetic, 1, 0),
    )];
    let mut edge_types = Vec::new();
    let mut edges = Vec::new();
    for (a, aux) in spec.aux_types.iter().enumerate() {
        let ty = a + 1;
        node_types.push(NodeType {
            name: format!("aux{a}"),
            count: aux.count,
            feature_dim: spec.feature_dim,
        });
        let community: Vec<usize> = (0..aux.count).map(|j| j % k).collect();
        features.push(centroid_features(
            &community,
            spec.feature_dim,
            &noise,
            &mut stream_rng(spec.seed, Stream::Synthetic, 1, ty as u64),
        ));
        // community c holds nodes c, c + k, c + 2k, ...
        let size = |c: usize| (aux.count - c).div_ceil(k);
        let mut rng = stream_rng(spec.seed, Stream::Synthetic, 0, ty as u64);
        let mut list = Vec::with_capacity(spec.target_count * spec.edges_per_node);
        for (t, &class) in target_labels.iter().enumerate() {
            for _ in 0..spec.edges_per_node {
                let c = if rng.random_bool(aux.affinity) {
                    class
                } else {
                    let other = rng.random_range(0..k - 1);
                    if other >= class {
                        other + 1
                    } else {
                        other
                    }
                };
                let j = c + k * rng.random_range(0..size(c));
                list.push((t, j));
            }
        }
        edge_types.push(EdgeType {
            name: format!("target-aux{a}"),
            src: 0,
            dst: ty,
        });
        edges.push(list);
    }
    let graph = HeteroGraph::build(GraphSpec {
        node_types,
        features,
        edge_types,
        edges,
    })?;
    let labels = Labels::new(0, target_labels).expect("round-robin labels are contiguous");
    Ok(Dataset {
        graph,
        labels: Some(labels),
    })
}

/// Generates the graph and writes it as a graph directory.
pub fn write_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<Dataset, IoError> {
    let data = generate_synthetic(spec)?;
    save_graph(&data, dir, false)?;
    Ok(data)
}
