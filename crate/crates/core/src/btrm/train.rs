use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Arch, BtrmError, EmbeddedPair, RewardModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Linear warmup over `warmup_fraction` of steps, then linear decay to 0.
    LinearDecay,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub epochs: usize,
    pub rng_seed: u64,
    pub warmup_fraction: f64,
    /// Heavy-ball momentum; 0 gives plain SGD.
    pub momentum: f64,
    /// Gold accuracy is evaluated every this many steps and at the last step.
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Arch::Linear,
            learning_rate: 3e-3,
            batch_size: 256,
            schedule: Schedule::LinearDecay,
            epochs: 5,
            rng_seed: 0,
            warmup_fraction: 0.03,
            momentum: 0.9,
            eval_interval: 50,
        }
    }
}

impl TrainConfig {
    /// Development regime: batch 256 with linear decay and warmup.
    pub fn small_batch() -> Self {
        TrainConfig::default()
    }

    /// Final-run regime: very large batches at a constant learning rate.
    pub fn large_batch() -> Self {
        TrainConfig {
            batch_size: 10_240,
            schedule: Schedule::Constant,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), BtrmError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(BtrmError::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(BtrmError::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(BtrmError::Config("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(BtrmError::Config("warmup_fraction must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(BtrmError::Config("momentum must be in [0, 1)".into()));
        }
        if self.eval_interval == 0 {
            return Err(BtrmError::Config("eval_interval must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate at 0-based step `t` of `total`.
    pub fn lr_at(&self, t: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::LinearDecay => {
                let warm = (self.warmup_fraction * total as f64).round() as usize;
                if t < warm {
                    self.learning_rate * (t + 1) as f64 / warm as f64
                } else {
                    self.learning_rate * (total - t) as f64 / (total - warm) as f64
                }
            }
        }
    }
}

/// One line of the training history file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_acc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Checkpoint with the highest gold accuracy (earliest on ties).
    pub model: RewardModel,
    pub best_gold_accuracy: f64,
    pub best_step: usize,
    pub final_model: RewardModel,
    pub final_gold_accuracy: f64,
    pub history: Vec<HistoryRecord>,
    /// Full-data training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD on the Bradley-Terry loss with gold-accuracy checkpoint
/// selection. Deterministic given `config.rng_seed`.
pub fn train(
    silver: &[EmbeddedPair],
    gold: &[EmbeddedPair],
    config: &TrainConfig,
) -> Result<TrainReport, BtrmError> {
    config.validate()?;
    let dim = silver
        .first()
        .ok_or(BtrmError::Empty("silver set"))?
        .chosen
        .dim();
    if gold.is_empty() {
        return Err(BtrmError::Empty("gold set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut model = RewardModel::init(config.arch, dim, &mut rng);
    model.check_pairs(silver)?;
    model.check_pairs(gold)?;

    let n = silver.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let mut velocity = vec![0.0; model.n_params()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(total);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut final_acc = 0.0;
    let mut step = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let lr = config.lr_at(step, total);
            let (loss, grad) = model
                .loss_and_grad_at(silver, batch)
                .map_err(|_| BtrmError::Diverged {
                    step: step + 1,
                    loss: f64::NAN,
                })?;
            for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v + g;
                *p -= lr * *v;
            }
            if !model.params.iter().all(|p| p.is_finite()) {
                return Err(BtrmError::Diverged {
                    step: step + 1,
                    loss,
                });
            }
            step += 1;
            let mut rec = HistoryRecord {
                step,
                loss,
                lr,
                gold_acc: None,
            };
            if step % config.eval_interval == 0 || step == total {
                let acc = model.pairwise_accuracy(gold)?;
                rec.gold_acc = Some(acc);
                final_acc = acc;
                if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                    best = Some((acc, step, model.params.clone()));
                }
            }
            history.push(rec);
        }
        let epoch_loss = model.mean_loss(silver)?;
        if !epoch_loss.is_finite() {
            return Err(BtrmError::Diverged {
                step,
                loss: epoch_loss,
            });
        }
        epoch_losses.push(epoch_loss);
    }

    let (best_acc, best_step, best_params) = best.expect("last step is always evaluated");
    let final_model = model.clone();
    model.params = best_params;
    Ok(TrainReport {
        model,
        best_gold_accuracy: best_acc,
        best_step,
        final_model,
        final_gold_accuracy: final_acc,
        history,
        epoch_losses,
    })
}
