use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::Ranker;
use crate::error::Result;
use crate::retrieval::TokenId;

/// Class probabilities; the binary model fills only `pos` and `neg`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub pos: f64,
    pub neu_plus: f64,
    pub neu_minus: f64,
    pub neg: f64,
}

impl ClassDistribution {
    /// From model output in class-index order (4 classes, or positive/negative).
    pub fn from_probs(p: &[f64]) -> Self {
        match p.len() {
            4 => ClassDistribution {
                pos: p[0],
                neu_plus: p[1],
                neu_minus: p[2],
                neg: p[3],
            },
            2 => ClassDistribution {
                pos: p[0],
                neg: p[1],
                ..Default::default()
            },
            n => panic!("unsupported class count {n}"),
        }
    }

    pub fn mix(&self, other: &Self, alpha: f64) -> Self {
        let l = |a: f64, b: f64| alpha * a + (1.0 - alpha) * b;
        ClassDistribution {
            pos: l(self.pos, other.pos),
            neu_plus: l(self.neu_plus, other.neu_plus),
            neu_minus: l(self.neu_minus, other.neu_minus),
            neg: l(self.neg, other.neg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub pos: f64,
    pub neu_plus: f64,
    pub neu_minus: f64,
    pub neg: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights::UNIT
    }
}

impl ScoreWeights {
    pub const UNIT: ScoreWeights = ScoreWeights {
        pos: 1.0,
        neu_plus: 1.0,
        neu_minus: 1.0,
        neg: 1.0,
    };

    pub fn scaled(&self, c: f64) -> Self {
        ScoreWeights {
            pos: self.pos * c,
            neu_plus: self.neu_plus * c,
            neu_minus: self.neu_minus * c,
            neg: self.neg * c,
        }
    }

    fn get(&self, i: usize) -> f64 {
        [self.pos, self.neu_plus, self.neu_minus, self.neg][i]
    }

    fn set(&mut self, i: usize, v: f64) {
        match i {
            0 => self.pos = v,
            1 => self.neu_plus = v,
            2 => self.neu_minus = v,
            _ => self.neg = v,
        }
    }
}

/// `ω_pos·p_pos + ω_neu+·p_neu+ − ω_neu−·p_neu− − ω_neg·p_neg`
pub fn match_score(d: &ClassDistribution, w: &ScoreWeights) -> f64 {
    w.pos * d.pos + w.neu_plus * d.neu_plus - w.neu_minus * d.neu_minus - w.neg * d.neg
}

/// Sort `(id, score)` descending by score, ties by ascending id.
pub fn sort_scored(v: &mut [(u64, f64)]) {
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Score and order candidate answers for one joined question.
pub fn rank_candidates(
    model: &Ranker<f32>,
    question: &[TokenId],
    candidates: &[(u64, Vec<TokenId>)],
    w: &ScoreWeights,
) -> Result<Vec<(u64, f64)>> {
    let dists = distributions(model, question, candidates)?;
    let mut scored: Vec<(u64, f64)> = candidates.iter().zip(&dists).map(|((id, _), d)| (*id, match_score(d, w))).collect();
    sort_scored(&mut scored);
    Ok(scored)
}

/// Class distributions of each candidate, in input order.
pub fn distributions(model: &Ranker<f32>, question: &[TokenId], candidates: &[(u64, Vec<TokenId>)]) -> Result<Vec<ClassDistribution>> {
    candidates
        .par_iter()
        .map(|(_, a)| {
            let p = model.forward(question, a)?;
            let p: Vec<f64> = p.into_iter().map(f64::from).collect();
            Ok(ClassDistribution::from_probs(&p))
        })
        .collect()
}

/// Cached candidate distributions of one validation question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPool {
    pub candidates: Vec<(u64, ClassDistribution)>,
    pub accepted: u64,
}

/// Fraction of pools whose top-scored candidate is the accepted answer.
pub fn pool_precision_at_1(pools: &[ScoredPool], w: &ScoreWeights) -> f64 {
    if pools.is_empty() {
        return 0.0;
    }
    let hits = pools
        .iter()
        .filter(|p| {
            let mut scored: Vec<(u64, f64)> = p.candidates.iter().map(|(id, d)| (*id, match_score(d, w))).collect();
            sort_scored(&mut scored);
            scored.first().is_some_and(|top| top.0 == p.accepted)
        })
        .count();
    hits as f64 / pools.len() as f64
}

/// {0, 0.01, …, 0.1, 0.2, …, 1, 2, …, 10}
pub fn weight_grid() -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend((1..=10).map(|i| i as f64 / 100.0));
    g.extend((2..=10).map(|i| i as f64 / 10.0));
    g.extend((2..=10).map(|i| i as f64));
    g
}

/// Coordinate sweep over the grid, starting from unit weights, in the order
/// ω_neg, ω_neu−, ω_neu+, ω_pos. A weight moves only when some grid value
/// strictly beats its current objective; the smallest such best value wins.
pub fn tune_weights(pools: &[ScoredPool]) -> ScoreWeights {
    let mut w = ScoreWeights::UNIT;
    if pools.is_empty() {
        return w;
    }
    let grid = weight_grid();
    for coord in [3, 2, 1, 0] {
        let current = pool_precision_at_1(pools, &w);
        let mut best = (current, w.get(coord));
        for &v in &grid {
            let mut trial = w;
            trial.set(coord, v);
            let obj = pool_precision_at_1(pools, &trial);
            if obj > best.0 {
                best = (obj, v);
            }
        }
        w.set(coord, best.1);
    }
    w
}
