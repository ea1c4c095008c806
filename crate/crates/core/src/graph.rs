//! Heterogeneous graph model: typed nodes with per-type features and typed
//! edges stored in both directions.

use std::collections::HashSet;
use std::sync::Arc;

use mn_autodiff::{Matrix, Segments};
use rand::seq::{index, SliceRandom};
use thiserror::Error;

use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge type `{edge_type}` edge {edge}: endpoint out of range ({endpoint} >= {count} nodes of type `{node_type}`)")]
    EndpointOutOfRange {
        edge_type: String,
        edge: usize,
        endpoint: usize,
        node_type: String,
        count: usize,
    },
    #[error("features of `{node_type}`: expected {want_rows}x{want_cols}, got {got_rows}x{got_cols}")]
    FeatureShape {
        node_type: String,
        want_rows: usize,
        want_cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("a heterogeneous graph needs |node types| + |edge types| > 2, got {node_types} + {edge_types}")]
    TooFewTypes { node_types: usize, edge_types: usize },
    #[error("node type `{0}` must have a positive count and feature dimension")]
    EmptyType(String),
    #[error("edge type `{edge_type}` references node type index {index}, only {count} types exist")]
    UnknownNodeType {
        edge_type: String,
        index: usize,
        count: usize,
    },
    #[error("duplicate type name `{0}`")]
    DuplicateName(String),
    #[error("expected {want} {what}, got {got}")]
    Arity { what: &'static str, want: usize, got: usize },
    #[error("edge type index {index} out of range ({count} edge types)")]
    EdgeTypeIndex { index: usize, count: usize },
    #[error("node index {index} out of range ({count} nodes)")]
    NodeIndex { index: usize, count: usize },
    #[error("meta-node ratio r must lie in [1, 100], got {0}")]
    InvalidRatio(f64),
    #[error("keep fraction must lie in (0, 1], got {0}")]
    InvalidKeepFraction(f64),
    #[error("invalid permutation for node type `{0}`")]
    InvalidPermutation(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeType {
    pub name: String,
    pub count: usize,
    pub feature_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeType {
    pub name: String,
    /// Index into the node type list.
    pub src: usize,
    pub dst: usize,
}

/// Unvalidated description of a graph, the input to [`HeteroGraph::build`].
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSpec {
    pub node_types: Vec<NodeType>,
    /// One `count x feature_dim` matrix per node type.
    pub features: Vec<Matrix>,
    pub edge_types: Vec<EdgeType>,
    /// `(src, dst)` pairs per edge type.
    pub edges: Vec<Vec<(usize, usize)>>,
}

/// Edges of one type plus compressed neighbor lists in both directions.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    edges: Arc<Vec<(usize, usize)>>,
    /// Destination node -> source neighbors, in edge order.
    forward: Arc<Segments>,
    /// Source node -> destination neighbors, in edge order.
    reverse: Arc<Segments>,
}

impl Adjacency {
    fn new(edges: Vec<(usize, usize)>, src_count: usize, dst_count: usize) -> Self {
        let srcs: Vec<usize> = edges.iter().map(|e| e.0).collect();
        let dsts: Vec<usize> = edges.iter().map(|e| e.1).collect();
        Self {
            forward: Arc::new(Segments::group_by_key(dst_count, &dsts, &srcs)),
            reverse: Arc::new(Segments::group_by_key(src_count, &srcs, &dsts)),
            edges: Arc::new(edges),
        }
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn forward(&self) -> &Arc<Segments> {
        &self.forward
    }

    pub fn reverse(&self) -> &Arc<Segments> {
        &self.reverse
    }
}

/// Validated, immutable heterogeneous graph.
#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    node_types: Vec<NodeType>,
    features: Vec<Matrix>,
    edge_types: Vec<EdgeType>,
    adjacency: Vec<Adjacency>,
}

/// Nodes of each type attached to that type's meta-node.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaNodeSample {
    /// Sorted, duplicate-free node indices per type.
    pub members: Vec<Vec<usize>>,
    pub ratio: f64,
}

impl MetaNodeSample {
    /// Every node attached (r = 100); used for inference.
    pub fn full(g: &HeteroGraph) -> Self {
        Self {
            members: g.node_types.iter().map(|t| (0..t.count).collect()).collect(),
            ratio: 100.0,
        }
    }

    /// The sample expressed under relabelled node ids (`perms[j][old] = new`).
    pub fn relabel(&self, perms: &[Vec<usize>]) -> Self {
        let members = self
            .members
            .iter()
            .zip(perms)
            .map(|(m, p)| {
                let mut v: Vec<usize> = m.iter().map(|&i| p[i]).collect();
                v.sort_unstable();
                v
            })
            .collect();
        Self {
            members,
            ratio: self.ratio,
        }
    }
}

/// Members drawn for a type of `count` nodes at ratio `r` percent:
/// `round(r/100 · count)`, at least one.
pub fn member_count(count: usize, r: f64) -> usize {
    (((r / 100.0) * count as f64).round() as usize).clamp(1, count.max(1))
}

impl HeteroGraph {
    pub fn build(spec: GraphSpec) -> Result<Self, GraphError> {
        let GraphSpec {
            node_types,
            features,
            edge_types,
            edges,
        } = spec;
        if node_types.len() + edge_types.len() <= 2 {
            return Err(GraphError::TooFewTypes {
                node_types: node_types.len(),
                edge_types: edge_types.len(),
            });
        }
        if features.len() != node_types.len() {
            return Err(GraphError::Arity {
                what: "feature matrices",
                want: node_types.len(),
                got: features.len(),
            });
        }
        if edges.len() != edge_types.len() {
            return Err(GraphError::Arity {
                what: "edge lists",
                want: edge_types.len(),
                got: edges.len(),
            });
        }
        let mut names = HashSet::new();
        for t in &node_types {
            if t.count == 0 || t.feature_dim == 0 {
                return Err(GraphError::EmptyType(t.name.clone()));
            }
            if !names.insert(t.name.as_str()) {
                return Err(GraphError::DuplicateName(t.name.clone()));
            }
        }
        let mut edge_names = HashSet::new();
        for et in &edge_types {
            if !edge_names.insert(et.name.as_str()) {
                return Err(GraphError::DuplicateName(et.name.clone()));
            }
        }
        for (t, f) in node_types.iter().zip(&features) {
            if f.shape() != (t.count, t.feature_dim) {
                return Err(GraphError::FeatureShape {
                    node_type: t.name.clone(),
                    want_rows: t.count,
                    want_cols: t.feature_dim,
                    got_rows: f.rows(),
                    got_cols: f.cols(),
                });
            }
        }
        let mut adjacency = Vec::with_capacity(edge_types.len());
        for (et, list) in edge_types.iter().zip(edges) {
            for &ty in &[et.src, et.dst] {
                if ty >= node_types.len() {
                    return Err(GraphError::UnknownNodeType {
                        edge_type: et.name.clone(),
                        index: ty,
                        count: node_types.len(),
                    });
                }
            }
            let (sc, dc) = (node_types[et.src].count, node_types[et.dst].count);
            for (k, &(s, d)) in list.iter().enumerate() {
                let bad = if s >= sc {
                    Some((s, et.src))
                } else if d >= dc {
                    Some((d, et.dst))
                } else {
                    None
                };
                if let Some((endpoint, ty)) = bad {
                    return Err(GraphError::EndpointOutOfRange {
                        edge_type: et.name.clone(),
                        edge: k,
                        endpoint,
                        node_type: node_types[ty].name.clone(),
                        count: node_types[ty].count,
                    });
                }
            }
            adjacency.push(Adjacency::new(list, sc, dc));
        }
        Ok(Self {
            node_types,
            features,
            edge_types,
            adjacency,
        })
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn num_node_types(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_edge_types(&self) -> usize {
        self.edge_types.len()
    }

    pub fn node_count(&self, ty: usize) -> usize {
        self.node_types[ty].count
    }

    pub fn total_nodes(&self) -> usize {
        self.node_types.iter().map(|t| t.count).sum()
    }

    pub fn features(&self, ty: usize) -> &Matrix {
        &self.features[ty]
    }

    pub fn adjacency(&self, et: usize) -> &Adjacency {
        &self.adjacency[et]
    }

    pub fn edge_count(&self, et: usize) -> usize {
        self.adjacency[et].edges.len()
    }

    pub fn node_type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn edge_type_index(&self, name: &str) -> Option<usize> {
        self.edge_types.iter().position(|t| t.name == name)
    }

    fn check_edge_type(&self, et: usize) -> Result<(), GraphError> {
        if et >= self.edge_types.len() {
            return Err(GraphError::EdgeTypeIndex {
                index: et,
                count: self.edge_types.len(),
            });
        }
        Ok(())
    }

    /// Source neighbors of destination node `dst` under edge type `et`.
    pub fn neighbors(&self, et: usize, dst: usize) -> Result<&[usize], GraphError> {
        self.check_edge_type(et)?;
        let fwd = &self.adjacency[et].forward;
        if dst >= fwd.num_groups() {
            return Err(GraphError::NodeIndex {
                index: dst,
                count: fwd.num_groups(),
            });
        }
        Ok(fwd.group(dst))
    }

    /// Destination neighbors of source node `src` under edge type `et`.
    pub fn reverse_neighbors(&self, et: usize, src: usize) -> Result<&[usize], GraphError> {
        self.check_edge_type(et)?;
        let rev = &self.adjacency[et].reverse;
        if src >= rev.num_groups() {
            return Err(GraphError::NodeIndex {
                index: src,
                count: rev.num_groups(),
            });
        }
        Ok(rev.group(src))
    }

    /// Reassembles the raw description (round-trips through `build`).
    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            node_types: self.node_types.clone(),
            features: self.features.clone(),
            edge_types: self.edge_types.clone(),
            edges: self.adjacency.iter().map(|a| a.edges.to_vec()).collect(),
        }
    }

    /// Same structure with replacement feature matrices.
    pub fn with_features(&self, features: Vec<Matrix>) -> Result<Self, GraphError> {
        for (t, f) in self.node_types.iter().zip(&features) {
            if f.shape() != (t.count, t.feature_dim) {
                return Err(GraphError::FeatureShape {
                    node_type: t.name.clone(),
                    want_rows: t.count,
                    want_cols: t.feature_dim,
                    got_rows: f.rows(),
                    got_cols: f.cols(),
                });
            }
        }
        Ok(Self {
            node_types: self.node_types.clone(),
            features,
            edge_types: self.edge_types.clone(),
            adjacency: self.adjacency.clone(),
        })
    }

    /// Negative graph for contrastive training: each type's feature rows are
    /// shuffled by an independent uniform permutation. Adjacency is shared.
    pub fn corrupt(&self, seed: u64) -> HeteroGraph {
        let features = self
            .features
            .iter()
            .enumerate()
            .map(|(ty, f)| {
                let perm = corruption_permutation(f.rows(), seed, ty);
                f.select_rows(&perm)
            })
            .collect();
        Self {
            node_types: self.node_types.clone(),
            features,
            edge_types: self.edge_types.clone(),
            adjacency: self.adjacency.clone(),
        }
    }

    /// Draws the nodes attached to each meta-node: a uniform sample without
    /// replacement of [`member_count`] nodes per type, independently per type.
    pub fn sample_meta_members(&self, r: f64, seed: u64) -> Result<MetaNodeSample, GraphError> {
        if !(1.0..=100.0).contains(&r) {
            return Err(GraphError::InvalidRatio(r));
        }
        let members = self
            .node_types
            .iter()
            .enumerate()
            .map(|(ty, t)| {
                let k = member_count(t.count, r);
                if k == t.count {
                    return (0..t.count).collect();
                }
                let mut rng = stream_rng(seed, Stream::MetaSample, 0, ty as u64);
                let mut v = index::sample(&mut rng, t.count, k).into_vec();
                v.sort_unstable();
                v
            })
            .collect();
        Ok(MetaNodeSample { members, ratio: r })
    }

    /// Keeps `round(keep_fraction · |E_t|)` uniformly chosen edges of every
    /// edge type `t`, in their original order.
    pub fn sparsify(&self, keep_fraction: f64, seed: u64) -> Result<HeteroGraph, GraphError> {
        if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
            return Err(GraphError::InvalidKeepFraction(keep_fraction));
        }
        let adjacency = self
            .adjacency
            .iter()
            .enumerate()
            .map(|(et, adj)| {
                let m = adj.edges.len();
                let k = ((keep_fraction * m as f64).round() as usize).min(m);
                if k == m {
                    return adj.clone();
                }
                let mut rng = stream_rng(seed, Stream::Sparsify, 0, et as u64);
                let mut keep = index::sample(&mut rng, m, k).into_vec();
                keep.sort_unstable();
                let edges = keep.into_iter().map(|i| adj.edges[i]).collect();
                let ety = &self.edge_types[et];
                Adjacency::new(
                    edges,
                    self.node_types[ety.src].count,
                    self.node_types[ety.dst].count,
                )
            })
            .collect();
        Ok(Self {
            node_types: self.node_types.clone(),
            features: self.features.clone(),
            edge_types: self.edge_types.clone(),
            adjacency,
        })
    }

    /// Relabels nodes within each type: node `old` of type `j` becomes
    /// `perms[j][old]`. Features and edge endpoints move consistently.
    pub fn permute_nodes(&self, perms: &[Vec<usize>]) -> Result<HeteroGraph, GraphError> {
        if perms.len() != self.node_types.len() {
            return Err(GraphError::Arity {
                what: "permutations",
                want: self.node_types.len(),
                got: perms.len(),
            });
        }
        for (t, p) in self.node_types.iter().zip(perms) {
            let mut seen = vec![false; t.count];
            if p.len() != t.count
                || p.iter().any(|&i| i >= t.count || std::mem::replace(&mut seen[i], true))
            {
                return Err(GraphError::InvalidPermutation(t.name.clone()));
            }
        }
        let features = self
            .features
            .iter()
            .zip(perms)
            .map(|(f, p)| {
                let mut out = Matrix::zeros(f.rows(), f.cols());
                for (old, &new) in p.iter().enumerate() {
                    out.row_mut(new).copy_from_slice(f.row(old));
                }
                out
            })
            .collect();
        let edges = self
            .edge_types
            .iter()
            .zip(&self.adjacency)
            .map(|(et, adj)| {
                adj.edges
                    .iter()
                    .map(|&(s, d)| (perms[et.src][s], perms[et.dst][d]))
                    .collect()
            })
            .collect();
        HeteroGraph::build(GraphSpec {
            node_types: self.node_types.clone(),
            features,
            edge_types: self.edge_types.clone(),
            edges,
        })
    }
}

/// Row order used by [`HeteroGraph::corrupt`] for one node type: corrupted
/// row `i` takes original row `perm[i]`.
pub fn corruption_permutation(n: usize, seed: u64, ty: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, Stream::Corrupt, 0, ty as u64);
    perm.shuffle(&mut rng);
    perm
}
