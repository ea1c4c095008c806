//! `mnmp`: generate graphs, train the meta-node encoder, export embeddings
//! and evaluate them.
//!
//! Exit codes: 0 success, 2 usage or config error, 3 numerical failure,
//! 4 unreadable or mismatched artifact.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mn_autodiff::OpKind;
use mn_core::encoder::{ComMode, PoolMode};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "mnmp", version, about = "Meta-node message passing for heterogeneous graphs", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic community graph directory.
    Generate(GenerateArgs),
    /// Train the encoder contrastively and write a checkpoint and loss log.
    Train(TrainArgs),
    /// Export target-type embeddings from a checkpoint.
    Embed(EmbedArgs),
    /// Logistic regression on embeddings with a per-class label split.
    Classify(ClassifyArgs),
    /// k-means on embeddings, scored against labels.
    Cluster(ClusterArgs),
    /// Keep a random fraction of every edge type.
    Sparsify(SparsifyArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Base specification to start from.
    #[arg(long, default_value = "synth-easy")]
    pub preset: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of classes.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub target_count: Option<usize>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub feature_noise: Option<f64>,
    #[arg(long)]
    pub edges_per_node: Option<usize>,
    /// Same-community edge probability, applied to every auxiliary type.
    #[arg(long)]
    pub affinity: Option<f64>,
    /// Write features as binary matrices instead of TSV.
    #[arg(long)]
    pub binary_features: bool,
}

/// Every flag overrides the matching key of `--config`.
#[derive(Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Output directory for checkpoint.bin, train_log.jsonl and config.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub target_type: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub com: Option<ComMode>,
    #[arg(long)]
    pub pool: Option<PoolMode>,
    /// Percentage of each type's nodes linked to its meta-node per epoch.
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub use_meta_node: Option<bool>,
    #[arg(long)]
    pub batch_norm: Option<bool>,
}

#[derive(Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Embedding file; `.bin` selects the binary format, anything else TSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the type the checkpoint was trained for.
    #[arg(long)]
    pub target_type: Option<String>,
    /// Meta-node membership percentage at inference.
    #[arg(long, default_value_t = 100.0)]
    pub r: f64,
    /// Required when `--r` is below 100.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// `node<TAB>class` file covering every embedded node.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub n_per_class: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub n_val: usize,
    /// Defaults to every node outside the training and validation sets.
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Number of clusters; defaults to the number of classes.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
}

#[derive(Args)]
pub struct SparsifyArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub keep_fraction: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub binary_features: bool,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Check a single primitive instead of the full model.
    #[arg(long)]
    pub op: Option<OpKind>,
    /// Deliberately corrupt the backward pass of this primitive.
    #[arg(long)]
    pub break_backward: Option<OpKind>,
    /// Graph directory; defaults to a built-in 20-node toy graph.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value = "sum")]
    pub com: ComMode,
    #[arg(long, default_value = "mean")]
    pub pool: PoolMode,
    #[arg(long, default_value_t = 70.0)]
    pub r: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub use_meta_node: bool,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("MN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("MN_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = init_threads().and_then(|()| match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Classify(a) => commands::classify(&a),
        Command::Cluster(a) => commands::cluster(&a),
        Command::Sparsify(a) => commands::sparsify(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
