//! Meta-node message passing encoder.
//!
//! Each node type is first projected into a shared `d`-dimensional space:
//! `h⁰ = tanh(BN(W_φ x))`, or `tanh(W_φ x + b_φ)` without batch norm. Every
//! layer then combines, per node, its own representation, the pooled
//! representation of its type's meta-node and the sum over relation channels
//! of mean-aggregated neighbor messages:
//!
//! ```text
//! h' = tanh(W_com · COM(h, meta_φ, Σ_t agg_t) + b_com)
//! ```
//!
//! where COM is elementwise sum or column concatenation. Every edge type
//! contributes two channels (into its destination type and, reversed, into
//! its source type) that share one aggregator.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use mn_autodiff::{AdError, Matrix, ParamId, ParamStore, Reduce, Segments, Tape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{HeteroGraph, MetaNodeSample};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("meta-node of type `{0}` has no members")]
    EmptyMembers(String),
    #[error("parameter `{name}` has shape {got:?}, expected {want:?}")]
    ParamShape {
        name: String,
        want: (usize, usize),
        got: (usize, usize),
    },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("edge type index {0} out of range")]
    EdgeType(usize),
    #[error("expected representations for {want} node types, got {got}")]
    TypeCount { want: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComMode {
    Sum,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Sum,
    Mean,
    Max,
}

impl From<PoolMode> for Reduce {
    fn from(p: PoolMode) -> Self {
        match p {
            PoolMode::Sum => Reduce::Sum,
            PoolMode::Mean => Reduce::Mean,
            PoolMode::Max => Reduce::Max,
        }
    }
}

impl FromStr for ComMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(ComMode::Sum),
            "concat" => Ok(ComMode::Concat),
            _ => Err(format!("unknown COM mode `{s}` (expected sum or concat)")),
        }
    }
}

impl FromStr for PoolMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(PoolMode::Sum),
            "mean" => Ok(PoolMode::Mean),
            "max" => Ok(PoolMode::Max),
            _ => Err(format!("unknown pooling `{s}` (expected sum, mean or max)")),
        }
    }
}

impl fmt::Display for ComMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ComMode::Sum => "sum",
            ComMode::Concat => "concat",
        })
    }
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Reduce::from(*self).fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Shared latent dimension `d`.
    pub dim: usize,
    /// Number of message passing layers (the projection is not counted).
    pub num_layers: usize,
    pub com: ComMode,
    pub pool: PoolMode,
    pub use_meta_node: bool,
    pub use_batch_norm: bool,
    /// Percentage of each type's nodes attached to its meta-node per epoch.
    pub r: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            num_layers: 2,
            com: ComMode::Sum,
            pool: PoolMode::Mean,
            use_meta_node: true,
            use_batch_norm: true,
            r: 70.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.dim == 0 {
            return Err(EncoderError::Config("dim must be >= 1".into()));
        }
        if self.num_layers == 0 {
            return Err(EncoderError::Config("num_layers must be >= 1".into()));
        }
        if !(1.0..=100.0).contains(&self.r) {
            return Err(EncoderError::Config(format!("r must lie in [1, 100], got {}", self.r)));
        }
        Ok(())
    }

    /// Width of the COM network input.
    pub fn com_input_dim(&self) -> usize {
        match self.com {
            ComMode::Sum => self.dim,
            ComMode::Concat if self.use_meta_node => 3 * self.dim,
            ComMode::Concat => 2 * self.dim,
        }
    }
}

/// Weight and bias of an affine map `x ↦ W x + b` (stored as `out x in`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Type-wise input map. With batch norm the affine bias would be cancelled
/// by the normalization, so only `β` shifts the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Projection {
    pub weight: ParamId,
    /// Present only without batch norm.
    pub bias: Option<ParamId>,
    /// Batch-norm `(γ, β)` when enabled.
    pub norm: Option<(ParamId, ParamId)>,
}

/// All learnable tensors of the model, including the discriminator matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    store: ParamStore,
    pub projection: Vec<Projection>,
    /// `aggregators[layer][edge_type]`.
    pub aggregators: Vec<Vec<Linear>>,
    pub com: Vec<Linear>,
    pub discriminator: ParamId,
}

fn glorot(rng: &mut impl Rng, out: usize, inp: usize) -> Matrix {
    let limit = (6.0 / (inp + out) as f64).sqrt();
    let data = (0..out * inp).map(|_| rng.random_range(-limit..=limit)).collect();
    Matrix::from_vec(out, inp, data).expect("shape")
}

impl EncoderParams {
    /// Allocates every tensor with the shapes implied by `g` and `cfg`.
    /// Weights are Glorot-uniform from the `Init` stream of `seed`; biases
    /// and `β` are zero, `γ` is one.
    pub fn init(g: &HeteroGraph, cfg: &EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let mut counter = 0u64;
        let mut weight = |out: usize, inp: usize| {
            counter += 1;
            glorot(&mut stream_rng(seed, Stream::Init, counter, 0), out, inp)
        };
        let d = cfg.dim;
        let mut store = ParamStore::new();
        let mut projection = Vec::new();
        for t in g.node_types() {
            let w = store.add(format!("proj.{}.weight", t.name), weight(d, t.feature_dim), true);
            let bias = (!cfg.use_batch_norm)
                .then(|| store.add(format!("proj.{}.bias", t.name), Matrix::zeros(1, d), false));
            let norm = cfg.use_batch_norm.then(|| {
                (
                    store.add(format!("proj.{}.bn_gamma", t.name), Matrix::filled(1, d, 1.0), false),
                    store.add(format!("proj.{}.bn_beta", t.name), Matrix::zeros(1, d), false),
                )
            });
            projection.push(Projection { weight: w, bias, norm });
        }
        let mut aggregators = Vec::new();
        let mut com = Vec::new();
        for l in 0..cfg.num_layers {
            let mut per_edge = Vec::new();
            for et in g.edge_types() {
                let w = store.add(format!("layer{l}.agg.{}.weight", et.name), weight(d, d), true);
                let b = store.add(format!("layer{l}.agg.{}.bias", et.name), Matrix::zeros(1, d), false);
                per_edge.push(Linear { weight: w, bias: b });
            }
            aggregators.push(per_edge);
            let w = store.add(format!("layer{l}.com.weight"), weight(d, cfg.com_input_dim()), true);
            let b = store.add(format!("layer{l}.com.bias"), Matrix::zeros(1, d), false);
            com.push(Linear { weight: w, bias: b });
        }
        let discriminator = store.add("disc.weight", weight(d, d), true);
        Ok(Self {
            store,
            projection,
            aggregators,
            com,
            discriminator,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Replaces the value of the named tensor, checking its shape.
    pub fn set_value(&mut self, name: &str, value: Matrix) -> Result<(), EncoderError> {
        let id = self
            .store
            .find(name)
            .ok_or_else(|| EncoderError::MissingParam(name.to_string()))?;
        let p = self.store.get_mut(id);
        if p.value.shape() != value.shape() {
            return Err(EncoderError::ParamShape {
                name: name.to_string(),
                want: p.value.shape(),
                got: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let tensors: Vec<Tensor> = self.store.ids().map(|id| self.store.bind(tape, id)).collect();
        self.bind_tensors(&tensors)
    }

    /// Assembles handles from tensors already on a tape, one per stored
    /// parameter in id order.
    pub fn bind_tensors(&self, tensors: &[Tensor]) -> BoundParams {
        let t = |id: ParamId| tensors[id.index()];
        let lin = |l: &Linear| BoundLinear {
            weight: t(l.weight),
            bias: t(l.bias),
        };
        BoundParams {
            projection: self
                .projection
                .iter()
                .map(|p| BoundProjection {
                    weight: t(p.weight),
                    bias: p.bias.map(t),
                    norm: p.norm.map(|(g, b)| (t(g), t(b))),
                })
                .collect(),
            aggregators: self
                .aggregators
                .iter()
                .map(|layer| layer.iter().map(lin).collect())
                .collect(),
            com: self.com.iter().map(lin).collect(),
            discriminator: t(self.discriminator),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundProjection {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub norm: Option<(Tensor, Tensor)>,
}

/// Parameters recorded on one tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub projection: Vec<BoundProjection>,
    pub aggregators: Vec<Vec<BoundLinear>>,
    pub com: Vec<BoundLinear>,
    pub discriminator: Tensor,
}

/// Direction in which an edge type is traversed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Sources send to destinations.
    Forward,
    /// Destinations send to sources.
    Reverse,
}

/// `h⁰ = tanh(BN(X Wᵀ))` per node type, or `tanh(X Wᵀ + b)` without batch
/// norm.
pub fn project_features(
    tape: &mut Tape,
    g: &HeteroGraph,
    params: &BoundParams,
) -> Result<Vec<Tensor>, EncoderError> {
    let mut out = Vec::with_capacity(g.num_node_types());
    for (ty, p) in params.projection.iter().enumerate() {
        let x = tape.constant(g.features(ty).clone());
        let mut z = tape.matmul_bt(x, p.weight)?;
        if let Some(b) = p.bias {
            z = tape.add_row_broadcast(z, b)?;
        }
        if let Some((gamma, beta)) = p.norm {
            z = tape.batch_norm(z, gamma, beta)?;
        }
        out.push(tape.tanh(z));
    }
    Ok(out)
}

/// Per-destination message of one relation channel:
/// `W · mean(neighbor rows) + b`, or zero for nodes without neighbors.
///
/// Returns the receiving node type and the `count x d` message tensor.
pub fn aggregate_neighbors(
    tape: &mut Tape,
    h: &[Tensor],
    g: &HeteroGraph,
    edge_type: usize,
    direction: Direction,
    linear: &BoundLinear,
) -> Result<(usize, Tensor), EncoderError> {
    let et = g
        .edge_types()
        .get(edge_type)
        .ok_or(EncoderError::EdgeType(edge_type))?;
    let adj = g.adjacency(edge_type);
    let (from, to, seg) = match direction {
        Direction::Forward => (et.src, et.dst, adj.forward().clone()),
        Direction::Reverse => (et.dst, et.src, adj.reverse().clone()),
    };
    let n = seg.num_groups();
    let inv_deg: Vec<f64> = (0..n)
        .map(|i| match seg.group_len(i) {
            0 => 0.0,
            k => 1.0 / k as f64,
        })
        .collect();
    let has_nbr: Vec<f64> = (0..n).map(|i| (seg.group_len(i) > 0) as u8 as f64).collect();
    let summed = tape.segment_reduce(h[from], seg, Reduce::Sum)?;
    let mean = tape.scale_rows(summed, Arc::new(inv_deg))?;
    let mapped = tape.matmul_bt(mean, linear.weight)?;
    let mask = tape.constant(Matrix::from_vec(n, 1, has_nbr).expect("n x 1"));
    let bias = tape.matmul(mask, linear.bias)?;
    Ok((to, tape.add(mapped, bias)?))
}

/// Pooled meta-node vector (1 x d) over `members` rows of `h_type`.
pub fn meta_node_repr(
    tape: &mut Tape,
    h_type: Tensor,
    members: &[usize],
    pool: PoolMode,
) -> Result<Tensor, AdError> {
    if members.is_empty() {
        return Err(AdError::EmptySegment {
            op: "meta_node_repr",
            segment: 0,
        });
    }
    let seg = Arc::new(Segments::from_groups(&[members]));
    tape.segment_reduce(h_type, seg, pool.into())
}

/// One message passing layer over all node types. Meta-node vectors are
/// computed from the incoming representations `h`, so every node of a type
/// sees the same vector.
pub fn mn_mpl_layer(
    tape: &mut Tape,
    h: &[Tensor],
    g: &HeteroGraph,
    sample: &MetaNodeSample,
    aggregators: &[BoundLinear],
    com: &BoundLinear,
    cfg: &EncoderConfig,
) -> Result<Vec<Tensor>, EncoderError> {
    let types = g.num_node_types();
    if h.len() != types {
        return Err(EncoderError::TypeCount { want: types, got: h.len() });
    }
    let mut messages: Vec<Option<Tensor>> = vec![None; types];
    for (et, lin) in aggregators.iter().enumerate() {
        for dir in [Direction::Forward, Direction::Reverse] {
            let (to, msg) = aggregate_neighbors(tape, h, g, et, dir, lin)?;
            messages[to] = Some(match messages[to] {
                Some(acc) => tape.add(acc, msg)?,
                None => msg,
            });
        }
    }
    let mut out = Vec::with_capacity(types);
    for ty in 0..types {
        let own = h[ty];
        let n = own.rows();
        let mut parts = vec![own];
        if cfg.use_meta_node {
            let members = &sample.members[ty];
            if members.is_empty() {
                return Err(EncoderError::EmptyMembers(g.node_types()[ty].name.clone()));
            }
            let meta = meta_node_repr(tape, own, members, cfg.pool)?;
            parts.push(tape.row_gather(meta, Arc::new(vec![0; n]))?);
        }
        match messages[ty] {
            Some(m) => parts.push(m),
            None if cfg.com == ComMode::Concat => {
                parts.push(tape.constant(Matrix::zeros(n, cfg.dim)));
            }
            None => {}
        }
        let combined = match cfg.com {
            ComMode::Sum => {
                let mut acc = parts[0];
                for &p in &parts[1..] {
                    acc = tape.add(acc, p)?;
                }
                acc
            }
            ComMode::Concat => tape.concat_cols(&parts)?,
        };
        let z = tape.matmul_bt(combined, com.weight)?;
        let z = tape.add_row_broadcast(z, com.bias)?;
        out.push(tape.tanh(z));
    }
    Ok(out)
}

/// Projection followed by `num_layers` message passing layers.
pub fn encode(
    tape: &mut Tape,
    g: &HeteroGraph,
    params: &BoundParams,
    cfg: &EncoderConfig,
    sample: &MetaNodeSample,
) -> Result<Vec<Tensor>, EncoderError> {
    let mut h = project_features(tape, g, params)?;
    for (aggs, com) in params.aggregators.iter().zip(&params.com) {
        h = mn_mpl_layer(tape, &h, g, sample, aggs, com, cfg)?;
    }
    Ok(h)
}

/// Forward pass without gradient bookkeeping; returns one matrix per type.
pub fn embed(
    g: &HeteroGraph,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    sample: &MetaNodeSample,
) -> Result<Vec<Matrix>, EncoderError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let h = encode(&mut tape, g, &bound, cfg, sample)?;
    Ok(h.into_iter().map(|t| tape.value(t).clone()).collect())
}
