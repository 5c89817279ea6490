//! Pointwise Bradley-Terry reward head over frozen embeddings.
//!
//! A reward model assigns a scalar `r(e)` to a response embedding. For a
//! pair the model's preference probability is `p = σ(r(chosen) - r(rejected))`
//! and training minimises the mean of `-log p` over a batch.

mod checkpoint;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointError, CheckpointHeader};
pub use train::{train, HistoryRecord, Schedule, TrainConfig, TrainReport};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::Embedding;
use crate::pair::PairId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Linear,
    /// One tanh hidden layer.
    Mlp { hidden_dim: usize },
}

impl Arch {
    pub fn n_params(self, input_dim: usize) -> usize {
        match self {
            Arch::Linear => input_dim,
            // W (h×d), b (h), v (h)
            Arch::Mlp { hidden_dim } => hidden_dim * input_dim + 2 * hidden_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BtrmError {
    #[error("dimension mismatch: model expects {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("parameter count {actual} does not match arch ({expected})")]
    ParamCount { expected: usize, actual: usize },
    #[error("non-finite model parameters")]
    NonFiniteParams,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
}

/// Overflow-safe logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub arch: Arch,
    pub params: Vec<f64>,
    pub input_dim: usize,
    /// Iteration whose data produced this model.
    pub trained_on: u32,
}

/// Model preference probability for one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub pair_id: PairId,
    pub p: f64,
}

/// Chosen/rejected response embeddings of one training or evaluation pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedPair {
    pub chosen: Embedding,
    pub rejected: Embedding,
}

impl EmbeddedPair {
    pub fn new(chosen: Embedding, rejected: Embedding) -> Self {
        EmbeddedPair { chosen, rejected }
    }

    pub fn flipped(&self) -> Self {
        EmbeddedPair {
            chosen: self.rejected.clone(),
            rejected: self.chosen.clone(),
        }
    }
}

impl RewardModel {
    pub fn zeros(arch: Arch, input_dim: usize) -> Self {
        RewardModel {
            arch,
            params: vec![0.0; arch.n_params(input_dim)],
            input_dim,
            trained_on: 0,
        }
    }

    pub fn linear(weights: Vec<f64>) -> Self {
        RewardModel {
            arch: Arch::Linear,
            input_dim: weights.len(),
            params: weights,
            trained_on: 0,
        }
    }

    /// Small uniform initialisation; linear heads start at zero.
    pub fn init<R: Rng>(arch: Arch, input_dim: usize, rng: &mut R) -> Self {
        let mut m = Self::zeros(arch, input_dim);
        if let Arch::Mlp { hidden_dim } = arch {
            let a = 1.0 / (input_dim as f64).sqrt();
            let b = 1.0 / (hidden_dim as f64).sqrt();
            let (w, rest) = m.params.split_at_mut(hidden_dim * input_dim);
            let (_bias, v) = rest.split_at_mut(hidden_dim);
            w.iter_mut().for_each(|x| *x = rng.random_range(-a..a));
            v.iter_mut().for_each(|x| *x = rng.random_range(-b..b));
        }
        m
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn validate(&self) -> Result<(), BtrmError> {
        let expected = self.arch.n_params(self.input_dim);
        if self.params.len() != expected {
            return Err(BtrmError::ParamCount {
                expected,
                actual: self.params.len(),
            });
        }
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(BtrmError::NonFiniteParams);
        }
        Ok(())
    }

    fn check_dim(&self, e: &Embedding) -> Result<(), BtrmError> {
        if e.dim() != self.input_dim {
            return Err(BtrmError::DimMismatch {
                expected: self.input_dim,
                actual: e.dim(),
            });
        }
        Ok(())
    }

    /// Forward pass; `hidden` receives tanh activations for the MLP.
    fn forward(&self, e: &[f64], hidden: &mut Vec<f64>) -> f64 {
        match self.arch {
            Arch::Linear => self.params.iter().zip(e).map(|(w, x)| w * x).sum(),
            Arch::Mlp { hidden_dim } => {
                let d = self.input_dim;
                let (w, rest) = self.params.split_at(hidden_dim * d);
                let (b, v) = rest.split_at(hidden_dim);
                hidden.clear();
                hidden.extend((0..hidden_dim).map(|j| {
                    let row = &w[j * d..(j + 1) * d];
                    let z: f64 = row.iter().zip(e).map(|(a, x)| a * x).sum::<f64>() + b[j];
                    z.tanh()
                }));
                hidden.iter().zip(v).map(|(h, vj)| h * vj).sum()
            }
        }
    }

    /// Adds `scale * ∂r/∂θ` at input `e` into `grad`.
    fn backward(&self, e: &[f64], hidden: &[f64], scale: f64, grad: &mut [f64]) {
        match self.arch {
            Arch::Linear => grad.iter_mut().zip(e).for_each(|(g, x)| *g += scale * x),
            Arch::Mlp { hidden_dim } => {
                let d = self.input_dim;
                let v = &self.params[hidden_dim * d + hidden_dim..];
                let (gw, rest) = grad.split_at_mut(hidden_dim * d);
                let (gb, gv) = rest.split_at_mut(hidden_dim);
                for j in 0..hidden_dim {
                    let h = hidden[j];
                    gv[j] += scale * h;
                    let dz = scale * v[j] * (1.0 - h * h);
                    gb[j] += dz;
                    gw[j * d..(j + 1) * d]
                        .iter_mut()
                        .zip(e)
                        .for_each(|(g, x)| *g += dz * x);
                }
            }
        }
    }

    fn raw_score(&self, e: &Embedding) -> f64 {
        let mut hidden = Vec::new();
        self.forward(e.values(), &mut hidden)
    }

    /// Scalar reward of one response embedding.
    pub fn score(&self, e: &Embedding) -> Result<f64, BtrmError> {
        self.check_dim(e)?;
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(BtrmError::NonFiniteParams);
        }
        let r = self.raw_score(e);
        if !r.is_finite() {
            return Err(BtrmError::NonFinite("score"));
        }
        Ok(r)
    }

    /// `p = σ(r(chosen) - r(rejected))`.
    pub fn predict(&self, chosen: &Embedding, rejected: &Embedding) -> Result<f64, BtrmError> {
        Ok(sigmoid(self.score(chosen)? - self.score(rejected)?))
    }

    pub fn predict_pair(
        &self,
        pair_id: &PairId,
        chosen: &Embedding,
        rejected: &Embedding,
    ) -> Result<PairPrediction, BtrmError> {
        Ok(PairPrediction {
            pair_id: pair_id.clone(),
            p: self.predict(chosen, rejected)?,
        })
    }

    /// Accumulates the summed loss and gradient over `idx` into `grad`,
    /// weighting each element by `weight`.
    fn accumulate(
        &self,
        pairs: &[EmbeddedPair],
        idx: impl Iterator<Item = usize>,
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let mut hw = Vec::new();
        let mut hl = Vec::new();
        let mut loss = 0.0;
        for i in idx {
            let p = &pairs[i];
            let rw = self.forward(p.chosen.values(), &mut hw);
            let rl = self.forward(p.rejected.values(), &mut hl);
            let d = rw - rl;
            loss += weight * softplus(-d);
            // d/dd [-log σ(d)] = -σ(-d)
            let coef = -weight * sigmoid(-d);
            self.backward(p.chosen.values(), &hw, coef, grad);
            self.backward(p.rejected.values(), &hl, -coef, grad);
        }
        loss
    }

    fn check_pairs(&self, pairs: &[EmbeddedPair]) -> Result<(), BtrmError> {
        for p in pairs {
            self.check_dim(&p.chosen)?;
            self.check_dim(&p.rejected)?;
        }
        Ok(())
    }

    pub(crate) fn loss_and_grad_at(
        &self,
        pairs: &[EmbeddedPair],
        idx: &[usize],
    ) -> Result<(f64, Vec<f64>), BtrmError> {
        if idx.is_empty() {
            return Err(BtrmError::Empty("batch"));
        }
        let mut grad = vec![0.0; self.params.len()];
        let w = 1.0 / idx.len() as f64;
        let loss = self.accumulate(pairs, idx.iter().copied(), w, &mut grad);
        if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(BtrmError::NonFinite("loss"));
        }
        Ok((loss, grad))
    }

    /// Mean Bradley-Terry loss over the batch and its exact gradient.
    pub fn pairwise_loss(&self, batch: &[EmbeddedPair]) -> Result<(f64, Vec<f64>), BtrmError> {
        self.check_pairs(batch)?;
        let idx: Vec<usize> = (0..batch.len()).collect();
        self.loss_and_grad_at(batch, &idx)
    }

    /// Mean loss only.
    pub fn mean_loss(&self, pairs: &[EmbeddedPair]) -> Result<f64, BtrmError> {
        self.pairwise_loss(pairs).map(|(l, _)| l)
    }

    /// Fraction of pairs with `p > 0.5`; exact ties count as wrong.
    pub fn pairwise_accuracy(&self, pairs: &[EmbeddedPair]) -> Result<f64, BtrmError> {
        if pairs.is_empty() {
            return Err(BtrmError::Empty("pair set"));
        }
        self.check_pairs(pairs)?;
        let correct = pairs
            .iter()
            .filter(|p| sigmoid(self.raw_score(&p.chosen) - self.raw_score(&p.rejected)) > 0.5)
            .count();
        Ok(correct as f64 / pairs.len() as f64)
    }

    pub fn negated(&self) -> Self {
        let mut m = self.clone();
        match self.arch {
            Arch::Linear => m.params.iter_mut().for_each(|p| *p = -*p),
            Arch::Mlp { hidden_dim } => {
                let start = hidden_dim * self.input_dim + hidden_dim;
                m.params[start..].iter_mut().for_each(|p| *p = -*p);
            }
        }
        m
    }
}
