use std::collections::BTreeSet;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{argmax, Ranker};
use crate::error::{Error, Result};
use crate::neural::{batch_gradients, clip_global_norm, sgd_update, Params};
use crate::qboost::TrainConfig;
use crate::retrieval::TokenId;

/// A labeled ⟨joined question, answer⟩ pair as token ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub q: Vec<TokenId>,
    pub a: Vec<TokenId>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerHistory {
    pub epochs: Vec<RankerEpoch>,
    pub best_epoch: usize,
    pub best_valid_accuracy: f64,
}

/// Fraction of examples whose arg-max class equals the label.
pub fn accuracy(model: &Ranker<f32>, examples: &[Example]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let correct: usize = examples
        .par_iter()
        .map(|e| usize::from(argmax(&model.forward_cache(&e.q, &e.a).logits) == e.label))
        .sum();
    correct as f64 / examples.len() as f64
}

/// Mini-batch SGD on cross-entropy, early stopping on validation accuracy.
/// With an empty validation set the training accuracy is used instead.
pub fn train(mut model: Ranker<f32>, train: &[Example], valid: &[Example], cfg: &TrainConfig) -> Result<(Ranker<f32>, RankerHistory)> {
    if train.is_empty() {
        return Err(Error::Argument("empty ranker training set".into()));
    }
    if cfg.batch == 0 || cfg.lr <= 0.0 {
        return Err(Error::Argument("batch must be positive and lr > 0".into()));
    }
    let classes = model.cfg.classes;
    if let Some(bad) = train.iter().chain(valid).find(|e| e.label >= classes) {
        return Err(Error::Argument(format!("label {} outside {classes} classes", bad.label)));
    }
    let present: BTreeSet<usize> = train.iter().map(|e| e.label).collect();
    if present.len() < classes {
        warn!("ranker training data covers only {} of {classes} classes", present.len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = model.clone();
    let mut history = RankerHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_valid_accuracy: f64::NEG_INFINITY,
    };
    let mut stall = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = batch_gradients(&model, &batch, |m: &Ranker<f32>, e: &&Example, g| {
                Ok(m.accumulate_gradients(&e.q, &e.a, e.label, g).0)
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("ranker training loss at epoch {epoch}")));
            }
            grads.scale(1.0 / batch.len() as f32);
            clip_global_norm(&mut grads, cfg.clip);
            loss_sum += loss as f64;
            sgd_update(&mut model, &grads, cfg.lr)?;
        }
        let train_accuracy = accuracy(&model, train);
        let valid_accuracy = if valid.is_empty() { train_accuracy } else { accuracy(&model, valid) };
        let train_loss = loss_sum / train.len() as f64;
        info!("ranker epoch {epoch}: loss {train_loss:.4} train acc {train_accuracy:.3} valid acc {valid_accuracy:.3}");
        history.epochs.push(RankerEpoch {
            epoch,
            train_loss,
            train_accuracy,
            valid_accuracy,
        });
        if valid_accuracy > history.best_valid_accuracy {
            history.best_valid_accuracy = valid_accuracy;
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
