//! Dual-CNN four-class matcher, the weighted matching score, candidate
//! ranking and score-weight tuning.

mod model;
mod score;
mod train;

pub use model::{argmax, sentence_matrix, Branch, ForwardCache, Ranker, RankerConfig, FILTER_WIDTHS, MAX_ANSWER_LEN, MODEL_NAME};
pub use score::{
    distributions, match_score, pool_precision_at_1, rank_candidates, sort_scored, tune_weights, weight_grid, ClassDistribution,
    ScoreWeights, ScoredPool,
};
pub use train::{accuracy, train, Example, RankerEpoch, RankerHistory};
