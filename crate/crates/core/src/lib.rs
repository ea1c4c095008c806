//! Self-supervised node embeddings for heterogeneous graphs.
//!
//! Every node type gets a virtual meta-node attached to a sampled share of
//! its nodes, which lets same-type nodes exchange information without
//! hand-built meta-paths. The encoder is trained with a local-global
//! contrastive objective against feature-shuffled graphs.
//!
//! ```
//! use mn_core::contrastive::{train, TrainConfig};
//! use mn_core::encoder::{embed, EncoderConfig};
//! use mn_core::fixtures::toy_graph;
//! use mn_core::graph::MetaNodeSample;
//!
//! let g = toy_graph(1);
//! let cfg = TrainConfig {
//!     max_epochs: 5,
//!     patience: 5,
//!     encoder: EncoderConfig { dim: 8, ..Default::default() },
//!     ..Default::default()
//! };
//! let report = train(&g, &cfg).unwrap();
//! let h = embed(&g, &report.final_params, &cfg.encoder, &MetaNodeSample::full(&g)).unwrap();
//! assert_eq!(h[0].shape(), (12, 8));
//! ```

pub mod contrastive;
pub mod encoder;
pub mod eval;
pub mod fixtures;
pub mod graph;
pub mod io;
pub mod rng;

pub use contrastive::{train, TrainConfig, TrainReport, Trainer};
pub use encoder::{embed, ComMode, EncoderConfig, EncoderParams, PoolMode};
pub use graph::{HeteroGraph, MetaNodeSample};
