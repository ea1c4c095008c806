//! Contrastive objective and training loop.
//!
//! Positive pairs are `(h_i, s)` with `s = σ(mean_i h_i)` taken over every
//! node of the original graph; negative pairs are `(h̃_i, s)` where `h̃`
//! encodes a feature-shuffled copy of the graph. A bilinear discriminator
//! `σ(hᵀ W s)` scores the pairs and the encoder minimizes the binary cross
//! entropy.

use std::time::Instant;

use mn_autodiff::{grad_check, Adam, AdError, GradCheckReport, Matrix, OpKind, Tape, Tensor, DEFAULT_STEP};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{encode, BoundParams, EncoderConfig, EncoderError, EncoderParams};
use crate::graph::{GraphError, HeteroGraph, MetaNodeSample};
use crate::rng::{derive_seed, Stream};

/// Minimum decrease of the loss that resets the patience counter.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("non-finite loss {loss} at epoch {epoch}")]
    NonFinite { epoch: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
}

/// `σ(mean of all rows)` as a 1 x d tensor. `h` holds one tensor per type.
pub fn summary(tape: &mut Tape, h: &[Tensor]) -> Result<Tensor, AdError> {
    let all = tape.concat_rows(h)?;
    let n = all.rows();
    if n == 0 {
        return Err(AdError::EmptyInput { op: "summary" });
    }
    let mean = tape.segment_reduce(
        all,
        std::sync::Arc::new(mn_autodiff::Segments::single_range(n)),
        mn_autodiff::Reduce::Mean,
    )?;
    Ok(tape.logistic(mean))
}

/// Bilinear logits `h_iᵀ W s` for every row of `h` (N x 1).
pub fn discriminator_logits(tape: &mut Tape, h: Tensor, s: Tensor, w: Tensor) -> Result<Tensor, AdError> {
    // u = s Wᵀ, i.e. u_a = Σ_b W_ab s_b
    let u = tape.matmul_bt(s, w)?;
    tape.matmul_bt(h, u)
}

/// `D(h, s) = σ(hᵀ W s)`.
pub fn discriminate(h: &[f64], s: &[f64], w: &Matrix) -> Result<f64, AdError> {
    if h.len() != w.rows() || s.len() != w.cols() {
        return Err(AdError::Shape {
            op: "discriminate",
            detail: format!("h {} / s {} against W {:?}", h.len(), s.len(), w.shape()),
        });
    }
    let mut logit = 0.0;
    for (a, &ha) in h.iter().enumerate() {
        let ws: f64 = w.row(a).iter().zip(s).map(|(x, y)| x * y).sum();
        logit += ha * ws;
    }
    Ok(1.0 / (1.0 + (-logit).exp()))
}

/// Loss to minimize:
/// `-(1/2N) [Σ ln D(h_i, s) + Σ ln(1 - D(h̃_i, s))]`, built from log-sigmoid.
pub fn contrastive_loss(
    tape: &mut Tape,
    h: Tensor,
    h_corrupt: Tensor,
    s: Tensor,
    w: Tensor,
) -> Result<Tensor, AdError> {
    if h.shape() != h_corrupt.shape() {
        return Err(AdError::Shape {
            op: "contrastive_loss",
            detail: format!("positive {:?} vs negative {:?}", h.shape(), h_corrupt.shape()),
        });
    }
    let pos = discriminator_logits(tape, h, s, w)?;
    let neg = discriminator_logits(tape, h_corrupt, s, w)?;
    let pos = tape.log_sigmoid(pos);
    let neg = tape.scale(neg, -1.0);
    let neg = tape.log_sigmoid(neg);
    let both = tape.concat_rows(&[pos, neg])?;
    let mean = tape.mean_all(both)?;
    Ok(tape.scale(mean, -1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Node type whose embeddings are exported for evaluation.
    pub target_type: usize,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 0.0,
            max_epochs: 10_000,
            patience: 20,
            seed: 0,
            target_type: 0,
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be a finite value >= 0, got {}", self.lr)));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(TrainError::Config("weight_decay must be >= 0".into()));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Config("max_epochs must be >= 1".into()));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(TrainError::Config(format!(
                "patience must lie in [1, max_epochs], got {}",
                self.patience
            )));
        }
        self.encoder.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub elapsed_ms: u128,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
    /// Parameters at which the best loss was measured.
    pub final_params: EncoderParams,
}

/// Seeds used by one epoch (shared by meta-node sampling and corruption).
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    derive_seed(seed, Stream::Epoch, epoch as u64, 0)
}

/// Loss of one epoch on an existing tape: encodes `g` and its `corrupted`
/// copy with the same parameters and meta-node sample.
pub fn model_loss(
    tape: &mut Tape,
    g: &HeteroGraph,
    corrupted: &HeteroGraph,
    bound: &BoundParams,
    cfg: &EncoderConfig,
    sample: &MetaNodeSample,
) -> Result<Tensor, EncoderError> {
    let h = encode(tape, g, bound, cfg, sample)?;
    let h_neg = encode(tape, corrupted, bound, cfg, sample)?;
    let s = summary(tape, &h)?;
    let h_all = tape.concat_rows(&h)?;
    let h_neg_all = tape.concat_rows(&h_neg)?;
    Ok(contrastive_loss(tape, h_all, h_neg_all, s, bound.discriminator)?)
}

/// Builds the epoch's tape and returns it with the loss tensor.
pub fn epoch_objective(
    g: &HeteroGraph,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    seed: u64,
    epoch: usize,
) -> Result<(Tape, Tensor), TrainError> {
    let es = epoch_seed(seed, epoch);
    let sample = g.sample_meta_members(cfg.r, es)?;
    let corrupted = g.corrupt(es);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = model_loss(&mut tape, g, &corrupted, &bound, cfg, &sample)?;
    Ok((tape, loss))
}

/// Finite-difference check of the full objective (encoder, discriminator and
/// loss) with respect to every parameter, at the epoch-0 sample and
/// corruption of `seed`.
pub fn model_gradcheck(
    g: &HeteroGraph,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    seed: u64,
    fault: Option<OpKind>,
) -> Result<GradCheckReport, TrainError> {
    let es = epoch_seed(seed, 0);
    let sample = g.sample_meta_members(cfg.r, es)?;
    let corrupted = g.corrupt(es);
    let report = grad_check(
        |tape, tensors| {
            let bound = params.bind_tensors(tensors);
            model_loss(tape, g, &corrupted, &bound, cfg, &sample).map_err(|e| match e {
                EncoderError::Ad(e) => e,
                other => AdError::Shape {
                    op: "encode",
                    detail: other.to_string(),
                },
            })
        },
        params.store(),
        DEFAULT_STEP,
        fault,
    )?;
    Ok(report)
}

/// Stateful training loop; one call to [`Trainer::step`] is one epoch.
pub struct Trainer<'g> {
    graph: &'g HeteroGraph,
    cfg: TrainConfig,
    params: EncoderParams,
    epoch: usize,
    history: Vec<f64>,
    best: Option<(usize, f64, EncoderParams)>,
    stale: usize,
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g HeteroGraph, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let params = EncoderParams::init(graph, &cfg.encoder, cfg.seed)?;
        Ok(Self::resume(graph, cfg, params, 0))
    }

    /// Continues from saved parameters (including optimizer moments) at
    /// `epoch`.
    pub fn resume(graph: &'g HeteroGraph, cfg: TrainConfig, params: EncoderParams, epoch: usize) -> Self {
        Self {
            graph,
            cfg,
            params,
            epoch,
            history: Vec::new(),
            best: None,
            stale: 0,
        }
    }

    pub fn params(&self) -> &EncoderParams {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Runs one epoch: forward on the original and corrupted graph, backward
    /// and one Adam update. Returns the loss measured before the update.
    pub fn step(&mut self) -> Result<f64, TrainError> {
        let (tape, loss_t) = epoch_objective(
            self.graph,
            &self.params,
            &self.cfg.encoder,
            self.cfg.seed,
            self.epoch,
        )?;
        let loss = tape.scalar(loss_t);
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { epoch: self.epoch, loss });
        }
        let grads = tape.backward(loss_t)?;
        drop(tape);
        let improved = match &self.best {
            None => true,
            Some((_, best, _)) => loss < best - IMPROVEMENT_THRESHOLD,
        };
        if improved {
            self.best = Some((self.epoch, loss, self.params.clone()));
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let store = self.params.store_mut();
        store.set_grads(&grads)?;
        store.adam_step(&Adam::new(self.cfg.lr, self.cfg.weight_decay));
        self.history.push(loss);
        self.epoch += 1;
        Ok(loss)
    }

    /// True once the loss has not improved for `patience` epochs.
    pub fn should_stop(&self) -> bool {
        self.stale >= self.cfg.patience
    }

    /// Trains until `max_epochs` or early stopping, calling `on_epoch` after
    /// each epoch.
    pub fn run(mut self, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainReport, TrainError> {
        let start = Instant::now();
        while self.epoch < self.cfg.max_epochs && !self.should_stop() {
            let loss = self.step()?;
            on_epoch(&EpochRecord {
                epoch: self.epoch - 1,
                loss,
                elapsed_ms: start.elapsed().as_millis(),
            });
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainReport {
        let (best_epoch, best_loss, final_params) = self
            .best
            .unwrap_or((self.epoch, f64::NAN, self.params.clone()));
        TrainReport {
            loss_history: self.history,
            best_epoch,
            best_loss,
            final_params,
        }
    }

    /// Current parameters, including optimizer state, for checkpointing.
    pub fn into_params(self) -> EncoderParams {
        self.params
    }
}

/// Trains from scratch with `cfg`.
pub fn train(g: &HeteroGraph, cfg: &TrainConfig) -> Result<TrainReport, TrainError> {
    Trainer::new(g, cfg.clone())?.run(|_| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discriminate_closed_forms() {
        let w = Matrix::identity(3);
        let e1 = [1.0, 0.0, 0.0];
        let p = discriminate(&e1, &e1, &w).unwrap();
        assert!((p - 0.7310585786300049).abs() < 1e-12);
        let p0 = discriminate(&[0.0; 3], &[0.3, -2.0, 1.0], &Matrix::filled(3, 3, 4.0)).unwrap();
        assert_eq!(p0, 0.5);
        assert!(discriminate(&[0.0; 2], &e1, &w).is_err());
    }

    #[test]
    fn summary_of_zero_rows_is_half() {
        let mut tape = Tape::new();
        let a = tape.constant(Matrix::zeros(3, 4));
        let b = tape.constant(Matrix::zeros(2, 4));
        let s = summary(&mut tape, &[a, b]).unwrap();
        assert_eq!(tape.value(s).as_slice(), &[0.5; 4]);
    }

    #[test]
    fn summary_of_single_node() {
        let mut tape = Tape::new();
        let a = tape.constant(Matrix::row_vector(&[0.0, 2.0, -1.0]));
        let s = summary(&mut tape, &[a]).unwrap();
        let want: Vec<f64> = [0.0f64, 2.0, -1.0].iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        for (x, y) in tape.value(s).as_slice().iter().zip(&want) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn summary_rejects_empty() {
        let mut tape = Tape::new();
        let a = tape.constant(Matrix::zeros(0, 4));
        assert!(summary(&mut tape, &[a]).is_err());
    }

    #[test]
    fn loss_with_zero_discriminator_is_ln2() {
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::from_rows(&[[0.3, -1.0], [2.0, 0.5]]));
        let hn = tape.constant(Matrix::from_rows(&[[1.3, 0.0], [-2.0, 0.7]]));
        let s = tape.constant(Matrix::row_vector(&[0.6, 0.4]));
        let w = tape.constant(Matrix::zeros(2, 2));
        let l = contrastive_loss(&mut tape, h, hn, s, w).unwrap();
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_with_hand_set_logits() {
        // One positive with logit +1, one negative with logit -1:
        // loss = -(ln σ(1) + ln σ(1)) / 2 = softplus(-1)
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::row_vector(&[1.0]));
        let hn = tape.constant(Matrix::row_vector(&[-1.0]));
        let s = tape.constant(Matrix::row_vector(&[1.0]));
        let w = tape.constant(Matrix::identity(1));
        let l = contrastive_loss(&mut tape, h, hn, s, w).unwrap();
        assert!((tape.scalar(l) - 0.31326168751822286).abs() < 1e-12);
    }

    #[test]
    fn loss_vanishes_for_confident_discriminator() {
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::row_vector(&[10.0]));
        let hn = tape.constant(Matrix::row_vector(&[-10.0]));
        let s = tape.constant(Matrix::row_vector(&[1.0]));
        let w = tape.constant(Matrix::identity(1));
        let l = contrastive_loss(&mut tape, h, hn, s, w).unwrap();
        assert!(tape.scalar(l) < 1e-4);
    }

    #[test]
    fn loss_rejects_size_mismatch() {
        let mut tape = Tape::new();
        let h = tape.constant(Matrix::zeros(2, 2));
        let hn = tape.constant(Matrix::zeros(3, 2));
        let s = tape.constant(Matrix::zeros(1, 2));
        let w = tape.constant(Matrix::zeros(2, 2));
        assert!(contrastive_loss(&mut tape, h, hn, s, w).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig { max_epochs: 5, patience: 5, ..Default::default() };
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { max_epochs: 5, patience: 6, ..Default::default() },
            TrainConfig { lr: -1.0, ..Default::default() },
            TrainConfig { max_epochs: 0, patience: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        }
    }
}
