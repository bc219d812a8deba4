use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::Seq2Seq;
use crate::error::{Error, Result};
use crate::neural::{batch_gradients, clip_global_norm, sgd_update, Params};
use crate::retrieval::TokenId;

/// A ⟨question, clarifying question⟩ training pair as token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub patience: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip: f32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch: 64,
            lr: 0.01,
            patience: 5,
            clip: 5.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
}

/// Mean per-token negative log-likelihood over a pair set.
pub fn mean_token_loss(model: &Seq2Seq<f32>, pairs: &[Pair]) -> f64 {
    let parts: Vec<(f64, usize)> = pairs
        .par_iter()
        .map(|p| {
            let (l, n) = model.sequence_loss(&p.src, &p.tgt);
            (l as f64, n)
        })
        .collect();
    let (sum, n) = parts.into_iter().fold((0.0, 0), |(s, c), (l, n)| (s + l, c + n));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn validate(pairs: &[Pair]) -> Result<()> {
    if pairs.iter().any(|p| p.src.is_empty()) {
        return Err(Error::Argument("training pair with an empty source".into()));
    }
    Ok(())
}

/// Mini-batch SGD on the per-token loss with early stopping on validation
/// loss. Returns the best-validation parameters. With an empty validation
/// set the training loss drives early stopping.
pub fn train(mut model: Seq2Seq<f32>, train: &[Pair], valid: &[Pair], cfg: &TrainConfig) -> Result<(Seq2Seq<f32>, TrainHistory)> {
    if train.is_empty() {
        return Err(Error::Argument("empty qboost training set".into()));
    }
    if cfg.batch == 0 || cfg.lr <= 0.0 {
        return Err(Error::Argument("batch must be positive and lr > 0".into()));
    }
    validate(train)?;
    validate(valid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.clone();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_valid_loss: f64::INFINITY,
    };
    let mut stall = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut epoch_tokens = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Pair> = chunk.iter().map(|&i| &train[i]).collect();
            let tokens: usize = batch.iter().map(|p| p.tgt.len() + 1).sum();
            let (loss, mut grads) = batch_gradients(&model, &batch, |m: &Seq2Seq<f32>, p: &&Pair, g| {
                Ok(m.accumulate_gradients(&p.src, &p.tgt, g).0)
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("qboost training loss at epoch {epoch}")));
            }
            grads.scale(1.0 / tokens as f32);
            clip_global_norm(&mut grads, cfg.clip);
            sgd_update(&mut model, &grads, cfg.lr)?;
            epoch_loss += loss as f64;
            epoch_tokens += tokens;
        }
        let train_loss = epoch_loss / epoch_tokens as f64;
        let valid_loss = if valid.is_empty() {
            mean_token_loss(&model, train)
        } else {
            mean_token_loss(&model, valid)
        };
        if !valid_loss.is_finite() {
            return Err(Error::NonFinite(format!("qboost validation loss at epoch {epoch}")));
        }
        info!("qboost epoch {epoch}: train {train_loss:.4} valid {valid_loss:.4}");
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            valid_loss,
        });
        if valid_loss < history.best_valid_loss {
            history.best_valid_loss = valid_loss;
            history.best_epoch = epoch;
            best = model.clone();
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                break;
            }
        }
    }
    Ok((best, history))
}
