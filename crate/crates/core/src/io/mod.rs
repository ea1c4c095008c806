//! On-disk formats: graph directories, synthetic graphs, embedding files and
//! training checkpoints.

mod checkpoint;
mod embeddings;
mod graph_dir;
mod synthetic;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::encoder::EncoderError;
use crate::graph::GraphError;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, SavedTensor, CHECKPOINT_VERSION};
pub use embeddings::{
    load_embeddings, read_matrix_bin, save_embeddings, write_matrix_bin, EmbeddingFormat, EMBEDDING_VERSION,
};
pub use graph_dir::{load_graph, read_labels, save_graph, Dataset, Labels};
pub use synthetic::{generate_synthetic, write_synthetic, AuxType, SyntheticSpec, PRESETS};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Invalid { path: PathBuf, msg: String },
    #[error("{}: bad magic bytes, not a {what} file", path.display())]
    Magic { path: PathBuf, what: &'static str },
    #[error("{}: format version {got}, expected {want}", path.display())]
    Version { path: PathBuf, got: u32, want: u32 },
    #[error("tensor `{name}`: checkpoint holds {got:?}, model expects {want:?}")]
    TensorShape {
        name: String,
        got: (usize, usize),
        want: (usize, usize),
    },
    #[error("tensor `{0}` is missing from the checkpoint")]
    MissingTensor(String),
    #[error("checkpoint tensor `{0}` has no counterpart in the model")]
    UnexpectedTensor(String),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}
