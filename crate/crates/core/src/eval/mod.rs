//! Downstream evaluation of exported embeddings: label splits, softmax
//! regression, classification and clustering metrics.

mod cluster;
mod logreg;
mod metrics;
mod split;

use std::fmt::Write as _;

use mn_autodiff::Matrix;
use thiserror::Error;

pub use cluster::{ari, kmeans, nmi, silhouette, KMeansResult, KMEANS_MAX_ITERS};
pub use logreg::{logistic_fit, LogisticConfig, LogisticModel};
pub use metrics::{auc, macro_f1, micro_f1};
pub use split::{make_split, LabeledSplit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("class {class} has {available} labelled nodes, {requested} requested")]
    InsufficientClass {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("{available} nodes remain after the training split, {requested} requested for validation and test")]
    InsufficientRemainder { available: usize, requested: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("no class has both positive and negative samples")]
    NoScorableClass,
    #[error("k = {k} exceeds the {rows} available points")]
    TooManyClusters { k: usize, rows: usize },
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
}

/// Evaluation results. Absent entries were not computed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub macro_f1: Option<f64>,
    pub micro_f1: Option<f64>,
    pub auc: Option<f64>,
    pub nmi: Option<f64>,
    pub ari: Option<f64>,
    pub silhouette: Option<f64>,
}

/// Column order of [`Metrics::tsv_row`].
pub const TSV_COLUMNS: [&str; 6] = ["macro_f1", "micro_f1", "auc", "nmi", "ari", "silhouette"];

impl Metrics {
    fn values(&self) -> [Option<f64>; 6] {
        [
            self.macro_f1,
            self.micro_f1,
            self.auc,
            self.nmi,
            self.ari,
            self.silhouette,
        ]
    }

    /// `key=value` pairs separated by spaces, computed entries only.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in TSV_COLUMNS.iter().zip(self.values()) {
            if let Some(v) = v {
                if !out.is_empty() {
                    out.push(' ');
                }
                let _ = write!(out, "{k}={v:.6}");
            }
        }
        out
    }

    pub fn tsv_header() -> String {
        TSV_COLUMNS.join("\t")
    }

    /// One tab-separated row in [`TSV_COLUMNS`] order; missing values are `NA`.
    pub fn tsv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}")))
            .collect::<Vec<_>>()
            .join("\t")
    }
}

/// Fits softmax regression on a per-class split of `x` and scores the test
/// part with macro/micro-F1 and one-vs-rest AUC.
pub fn evaluate_classification(
    x: &Matrix,
    labels: &[usize],
    num_classes: usize,
    split: &LabeledSplit,
    cfg: &LogisticConfig,
) -> Result<Metrics, EvalError> {
    if x.rows() != labels.len() {
        return Err(EvalError::Length(x.rows(), labels.len()));
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect::<Vec<_>>();
    let model = logistic_fit(&x.select_rows(&split.train), &pick(&split.train), num_classes, cfg)?;
    let test_x = x.select_rows(&split.test);
    let y = pick(&split.test);
    let pred = model.predict(&test_x);
    Ok(Metrics {
        macro_f1: Some(macro_f1(&y, &pred, num_classes)?),
        micro_f1: Some(micro_f1(&y, &pred, num_classes)?),
        auc: Some(auc(&y, &model.predict_proba(&test_x), num_classes)?),
        ..Default::default()
    })
}

/// Runs k-means on `x` and compares the partition with `labels`. Silhouette
/// is measured on the k-means partition.
pub fn evaluate_clustering(x: &Matrix, labels: &[usize], k: usize, seed: u64, restarts: usize) -> Result<Metrics, EvalError> {
    if x.rows() != labels.len() {
        return Err(EvalError::Length(x.rows(), labels.len()));
    }
    let km = kmeans(x, k, seed, restarts)?;
    let sil = match silhouette(x, &km.assignments) {
        Ok(s) => Some(s),
        Err(EvalError::SingleCluster) => None,
        Err(e) => return Err(e),
    };
    Ok(Metrics {
        nmi: Some(nmi(&km.assignments, labels)?),
        ari: Some(ari(&km.assignments, labels)?),
        silhouette: sil,
        ..Default::default()
    })
}
