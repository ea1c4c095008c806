//! Training run configuration: a JSON file whose every key can be overridden
//! by the matching command-line flag.

use std::fs;
use std::path::{Path, PathBuf};

use mn_core::encoder::{ComMode, EncoderConfig, PoolMode};
use mn_core::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub graph: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Node type whose embeddings are exported. Defaults to the labelled
    /// type, or the first type if the graph has no labels.
    pub target_type: Option<String>,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub dim: usize,
    pub layers: usize,
    pub com: ComMode,
    pub pool: PoolMode,
    pub r: f64,
    pub use_meta_node: bool,
    pub batch_norm: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let e = EncoderConfig::default();
        Self {
            graph: None,
            out: None,
            seed: None,
            target_type: None,
            epochs: 500,
            lr: t.lr,
            weight_decay: t.weight_decay,
            patience: t.patience,
            dim: e.dim,
            layers: e.num_layers,
            com: e.com,
            pool: e.pool,
            r: e.r,
            use_meta_node: e.use_meta_node,
            batch_norm: e.use_batch_norm,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            num_layers: self.layers,
            com: self.com,
            pool: self.pool,
            use_meta_node: self.use_meta_node,
            use_batch_norm: self.batch_norm,
            r: self.r,
        }
    }

    pub fn train_config(&self, seed: u64, target_type: usize) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            max_epochs: self.epochs,
            patience: self.patience,
            seed,
            target_type,
            encoder: self.encoder(),
        }
    }
}
