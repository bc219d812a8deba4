//! Fixtures shared by the integration targets.
#![allow(dead_code)]

use std::time::{Duration, Instant};

use cqa_rank::qboost::{self, greedy_decode, Decoder, Pair, Seq2Seq, Seq2SeqConfig, TrainConfig};
use cqa_rank::ranker::{self, Example, Ranker, RankerConfig};
use cqa_rank::retrieval::{TokenId, Vocabulary, EOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub struct QboostOverfit {
    pub decoded: Vec<String>,
    pub target: Vec<String>,
    pub epochs: usize,
    pub final_train_loss: f64,
    pub elapsed: Duration,
}

/// Train on 50 copies of one pair and greedy-decode its source.
pub fn qboost_overfit() -> QboostOverfit {
    let title = toks("error loading update manager ?");
    let cq = toks("do you change server location ?");
    let vocab = Vocabulary::build([title.clone(), cq.clone()], 100).unwrap();
    let pair = Pair {
        src: vocab.encode(&title),
        tgt: vocab.encode(&cq),
    };
    let pairs = vec![pair.clone(); 50];
    let cfg = Seq2SeqConfig {
        vocab_size: vocab.len(),
        dim: 16,
        hidden: 32,
    };
    let start = Instant::now();
    let model = Seq2Seq::<f32>::new(cfg, 1).unwrap();
    let tc = TrainConfig {
        epochs: 50,
        batch: 10,
        lr: 0.5,
        ..TrainConfig::default()
    };
    let (model, hist) = qboost::train(model, &pairs, &pairs[..1], &tc).unwrap();
    let out = greedy_decode(&Decoder::new(&model, &pair.src), 20);
    let mut want: Vec<TokenId> = pair.tgt.clone();
    want.push(EOS);
    QboostOverfit {
        decoded: vocab.decode(&out.tokens),
        target: vocab.decode(&want),
        epochs: hist.epochs.len(),
        final_train_loss: hist.epochs.last().map_or(f64::NAN, |e| e.train_loss),
        elapsed: start.elapsed(),
    }
}

pub struct RankerOverfit {
    pub accuracy: f64,
    pub epochs: usize,
    pub elapsed: Duration,
}

/// 200 pairs whose answers use class-specific token ranges.
pub fn ranker_overfit() -> RankerOverfit {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vocab_size = 5 + 4 * 10 + 20;
    let examples: Vec<Example> = (0..200)
        .map(|i| {
            let label = i % 4;
            let q = (0..6).map(|_| 45 + rng.random_range(0..20)).collect();
            let a = (0..12).map(|_| 5 + (label * 10) as TokenId + rng.random_range(0..10)).collect();
            Example { q, a, label }
        })
        .collect();
    let start = Instant::now();
    let model = Ranker::<f32>::new(RankerConfig::new(vocab_size, 16, 8, 4), 3).unwrap();
    let tc = TrainConfig {
        epochs: 50,
        batch: 8,
        lr: 0.1,
        patience: 50,
        ..TrainConfig::default()
    };
    let (model, hist) = ranker::train(model, &examples, &[], &tc).unwrap();
    RankerOverfit {
        accuracy: ranker::accuracy(&model, &examples),
        epochs: hist.epochs.len(),
        elapsed: start.elapsed(),
    }
}
