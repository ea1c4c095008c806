//! Straight-loop re-implementations of the encoder used as test oracles.
#![allow(dead_code)]

pub mod metric_oracle;

use mn_autodiff::Matrix;
use mn_core::encoder::{ComMode, EncoderConfig, EncoderParams, PoolMode};
use mn_core::graph::{HeteroGraph, MetaNodeSample};

pub type Rows = Vec<Vec<f64>>;

pub fn rows_of(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn param(p: &EncoderParams, name: &str) -> Matrix {
    let id = p.store().find(name).unwrap_or_else(|| panic!("no tensor {name}"));
    p.store().value(id).clone()
}

/// `W x + b` with `W` stored `out x in` and `b` a `1 x out` row.
pub fn affine(w: &Matrix, b: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|o| {
            let mut acc = 0.0;
            for k in 0..w.cols() {
                acc += w.get(o, k) * x[k];
            }
            acc + b.get(0, o)
        })
        .collect()
}

pub fn projection(g: &HeteroGraph, p: &EncoderParams, cfg: &EncoderConfig) -> Vec<Rows> {
    let mut out = Vec::new();
    for (ty, t) in g.node_types().iter().enumerate() {
        let w = param(p, &format!("proj.{}.weight", t.name));
        let b = if cfg.use_batch_norm {
            Matrix::zeros(1, cfg.dim)
        } else {
            param(p, &format!("proj.{}.bias", t.name))
        };
        let x = g.features(ty);
        let mut z: Rows = (0..t.count).map(|i| affine(&w, &b, x.row(i))).collect();
        if cfg.use_batch_norm {
            let gamma = param(p, &format!("proj.{}.bn_gamma", t.name));
            let beta = param(p, &format!("proj.{}.bn_beta", t.name));
            let n = t.count as f64;
            for c in 0..cfg.dim {
                let mean = z.iter().map(|r| r[c]).sum::<f64>() / n;
                let var = z.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
                for r in z.iter_mut() {
                    r[c] = (r[c] - mean) / (var + 1e-5).sqrt() * gamma.get(0, c) + beta.get(0, c);
                }
            }
        }
        out.push(z.into_iter().map(|r| r.into_iter().map(f64::tanh).collect()).collect());
    }
    out
}

pub fn pool(rows: &Rows, members: &[usize], mode: PoolMode) -> Vec<f64> {
    let d = rows[0].len();
    let mut acc = match mode {
        PoolMode::Max => vec![f64::NEG_INFINITY; d],
        _ => vec![0.0; d],
    };
    for &m in members {
        for c in 0..d {
            match mode {
                PoolMode::Max => acc[c] = acc[c].max(rows[m][c]),
                _ => acc[c] += rows[m][c],
            }
        }
    }
    if mode == PoolMode::Mean {
        for v in acc.iter_mut() {
            *v /= members.len() as f64;
        }
    }
    acc
}

/// Message to `node` (of the receiving type) along one edge type; `reverse`
/// walks edges from destination to source.
pub fn neighbor_message(
    g: &HeteroGraph,
    h: &[Rows],
    et: usize,
    reverse: bool,
    node: usize,
    w: &Matrix,
    b: &Matrix,
) -> Vec<f64> {
    let e = &g.edge_types()[et];
    let from = if reverse { e.dst } else { e.src };
    let mut nbrs = Vec::new();
    for &(s, d) in g.adjacency(et).edges() {
        if !reverse && d == node {
            nbrs.push(s);
        }
        if reverse && s == node {
            nbrs.push(d);
        }
    }
    let dim = w.rows();
    if nbrs.is_empty() {
        return vec![0.0; dim];
    }
    let mut mean = vec![0.0; h[from][0].len()];
    for &u in &nbrs {
        for (m, v) in mean.iter_mut().zip(&h[from][u]) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= nbrs.len() as f64;
    }
    affine(w, b, &mean)
}

pub fn layer(
    g: &HeteroGraph,
    p: &EncoderParams,
    cfg: &EncoderConfig,
    sample: &MetaNodeSample,
    h: &[Rows],
    l: usize,
) -> Vec<Rows> {
    let wc = param(p, &format!("layer{l}.com.weight"));
    let bc = param(p, &format!("layer{l}.com.bias"));
    let mut out = Vec::new();
    for (ty, t) in g.node_types().iter().enumerate() {
        let meta = pool(&h[ty], &sample.members[ty], cfg.pool);
        let mut rows = Vec::new();
        for i in 0..t.count {
            let mut msg = vec![0.0; cfg.dim];
            for (et, e) in g.edge_types().iter().enumerate() {
                let w = param(p, &format!("layer{l}.agg.{}.weight", e.name));
                let b = param(p, &format!("layer{l}.agg.{}.bias", e.name));
                for reverse in [false, true] {
                    let to = if reverse { e.src } else { e.dst };
                    if to == ty {
                        let m = neighbor_message(g, h, et, reverse, i, &w, &b);
                        for c in 0..cfg.dim {
                            msg[c] += m[c];
                        }
                    }
                }
            }
            let own = &h[ty][i];
            let combined: Vec<f64> = match cfg.com {
                ComMode::Sum => (0..cfg.dim)
                    .map(|c| own[c] + if cfg.use_meta_node { meta[c] } else { 0.0 } + msg[c])
                    .collect(),
                ComMode::Concat => {
                    let mut v = own.clone();
                    if cfg.use_meta_node {
                        v.extend_from_slice(&meta);
                    }
                    v.extend_from_slice(&msg);
                    v
                }
            };
            rows.push(affine(&wc, &bc, &combined).into_iter().map(f64::tanh).collect());
        }
        out.push(rows);
    }
    out
}

pub fn encode(g: &HeteroGraph, p: &EncoderParams, cfg: &EncoderConfig, sample: &MetaNodeSample) -> Vec<Rows> {
    let mut h = projection(g, p, cfg);
    for l in 0..cfg.num_layers {
        h = layer(g, p, cfg, sample, &h, l);
    }
    h
}

/// Largest `|a - b| / max(|a|, |b|, 1)` over paired entries.
pub fn max_rel_diff(a: &Rows, b: &Matrix) -> f64 {
    assert_eq!(a.len(), b.rows());
    let mut worst: f64 = 0.0;
    for (i, r) in a.iter().enumerate() {
        assert_eq!(r.len(), b.cols());
        for (c, &x) in r.iter().enumerate() {
            let y = b.get(i, c);
            worst = worst.max((x - y).abs() / x.abs().max(y.abs()).max(1.0));
        }
    }
    worst
}
