//! Clarifying-question generation ("question boosting"): attentional
//! encoder-decoder, its training loop and beam-search decoding.

pub mod beam;
mod model;
mod train;

use serde::{Deserialize, Serialize};

pub use beam::{beam_search, beam_search_all, enumerate_all, greedy_decode, select_best, Hypothesis, StepModel};
pub use model::{Attention, DecodeStep, Encoded, Seq2Seq, Seq2SeqConfig, MODEL_NAME};
pub use train::{mean_token_loss, train, EpochStats, Pair, TrainConfig, TrainHistory};

use crate::neural::Scalar;
use crate::retrieval::{TokenId, Vocabulary, SEP, UNK};

/// Longest joined question fed to the ranker.
pub const MAX_QUESTION_LEN: usize = 40;

/// Decoder over one encoded source, for beam search.
pub struct Decoder<'a, T> {
    model: &'a Seq2Seq<T>,
    enc: Encoded<T>,
}

impl<'a, T: Scalar> Decoder<'a, T> {
    /// Empty sources are replaced by a single UNK.
    pub fn new(model: &'a Seq2Seq<T>, src: &[TokenId]) -> Self {
        let enc = if src.is_empty() { model.encode(&[UNK]) } else { model.encode(src) };
        Decoder { model, enc }
    }
}

impl<T: Scalar> StepModel for Decoder<'_, T> {
    type State = (Vec<T>, Vec<T>);

    fn initial(&self) -> Self::State {
        (self.enc.s0.clone(), vec![T::zero(); self.model.cfg.hidden])
    }

    fn step(&self, state: &Self::State, prev: TokenId) -> (Self::State, Vec<f64>) {
        let (h, c, lp) = self.model.step_log_probs(&self.enc, prev, &state.0, &state.1);
        ((h, c), lp)
    }
}

/// Generate a clarifying question for `src` (ids, no BOS/EOS).
pub fn generate<T: Scalar>(model: &Seq2Seq<T>, src: &[TokenId], beam_width: usize, max_len: usize) -> Vec<TokenId> {
    beam_search(&Decoder::new(model, src), beam_width, max_len)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoostedQuestion {
    pub original: Vec<String>,
    pub cq: Vec<String>,
    /// `original ⊕ <sep> ⊕ cq`, cut to the joined-length cap.
    pub joined: Vec<String>,
}

/// Join a title and a clarifying question, truncating from the tail.
pub fn join_question(title: &[String], cq: &[String], max_len: usize) -> Vec<String> {
    let mut joined: Vec<String> = title.to_vec();
    joined.push(crate::retrieval::RESERVED[SEP as usize].to_string());
    joined.extend(cq.iter().cloned());
    joined.truncate(max_len);
    joined
}

/// Decoding settings for boosting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoostConfig {
    pub beam: usize,
    pub max_len: usize,
    pub max_question_len: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        BoostConfig {
            beam: 10,
            max_len: 20,
            max_question_len: MAX_QUESTION_LEN,
        }
    }
}

/// Keep a generated question through its last `?`; without one it is dropped.
pub fn finish_cq(mut tokens: Vec<String>) -> Vec<String> {
    match tokens.iter().rposition(|t| t == "?") {
        Some(i) => {
            tokens.truncate(i + 1);
            tokens
        }
        None => Vec::new(),
    }
}

pub fn boost(model: &Seq2Seq<f32>, vocab: &Vocabulary, title: &[String], cfg: &BoostConfig) -> BoostedQuestion {
    let mut src = vocab.encode(title);
    src.truncate(cfg.max_question_len);
    let ids = generate(model, &src, cfg.beam, cfg.max_len);
    let cq = finish_cq(vocab.decode(&ids));
    BoostedQuestion {
        original: title.to_vec(),
        joined: join_question(title, &cq, cfg.max_question_len),
        cq,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn join_with_empty_cq() {
        assert_eq!(join_question(&toks("a b"), &[], 40), toks("a b <sep>"));
        assert_eq!(join_question(&toks("a b"), &toks("c ?"), 3), toks("a b <sep>"));
    }

    #[test]
    fn cq_is_cut_at_last_question_mark() {
        assert_eq!(finish_cq(toks("do you ? x")), toks("do you ?"));
        assert_eq!(finish_cq(toks("a ? b ?")), toks("a ? b ?"));
        assert!(finish_cq(toks("no mark")).is_empty());
    }

    #[test]
    fn joined_length_is_capped() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let title: Vec<String> = (0..rng.random_range(0..60)).map(|i| format!("t{i}")).collect();
            let cq: Vec<String> = (0..rng.random_range(0..21)).map(|i| format!("c{i}")).collect();
            let cap = rng.random_range(1..50);
            let j = join_question(&title, &cq, cap);
            assert!(j.len() <= cap);
            assert_eq!(&j[..j.len().min(title.len())], &title[..j.len().min(title.len())]);
        }
    }

    #[test]
    fn exhaustive_beam_on_reserved_vocabulary() {
        // 5-token vocabulary: PAD and BOS are masked, so at most 8 live
        // prefixes exist after 3 steps and a width-10 beam never drops the optimum
        let cfg = Seq2SeqConfig {
            vocab_size: 5,
            dim: 6,
            hidden: 5,
        };
        for seed in 0..20 {
            let mut m = Seq2Seq::<f64>::new(cfg, seed).unwrap();
            for (_, t) in crate::neural::Params::tensors_mut(&mut m) {
                t.data_mut().iter_mut().for_each(|v| *v *= 20.0);
            }
            let dec = Decoder::new(&m, &[1, 4, 1]);
            let opt = enumerate_all(&dec, 5, 4).iter().map(|h| h.log_prob).fold(f64::MIN, f64::max);
            let beam = beam_search_all(&dec, 10, 4).iter().map(|h| h.log_prob).fold(f64::MIN, f64::max);
            assert_eq!(beam, opt, "seed {seed}");
            let greedy = greedy_decode(&dec, 4);
            assert!(beam >= greedy.log_prob);
        }
    }
}
