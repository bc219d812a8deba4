use std::cmp::Ordering;

use crate::retrieval::{TokenId, BOS, EOS, PAD};

/// Autoregressive scorer driven by [`beam_search`].
pub trait StepModel {
    type State: Clone;
    fn initial(&self) -> Self::State;
    /// Advance by `prev`; return the new state and log-probabilities over the
    /// vocabulary for the next token.
    fn step(&self, state: &Self::State, prev: TokenId) -> (Self::State, Vec<f64>);
}

/// Tokens that may never be generated.
pub fn is_masked(t: TokenId) -> bool {
    t == PAD || t == BOS
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, including the final EOS when present.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
}

impl Hypothesis {
    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }

    /// Length-normalized score used for the final choice.
    pub fn score(&self) -> f64 {
        self.log_prob / self.tokens.len().max(1) as f64
    }

    /// Tokens without the trailing EOS.
    pub fn content(&self) -> &[TokenId] {
        if self.finished() {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

fn by_log_prob(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Top `k` unmasked tokens of a distribution, best first, ties by id.
fn top_tokens(lp: &[f64], k: usize) -> Vec<(TokenId, f64)> {
    let mut v: Vec<(TokenId, f64)> = lp
        .iter()
        .enumerate()
        .filter(|(t, _)| !is_masked(*t as TokenId))
        .map(|(t, &p)| (t as TokenId, p))
        .collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

/// Every completed hypothesis of a beam search: those that emitted EOS, plus
/// the survivors cut off at `max_len` steps (EOS counts as a step). At each
/// step all extensions are pooled and the `beam_width` best by cumulative
/// log-probability are kept.
pub fn beam_search_all<M: StepModel>(model: &M, beam_width: usize, max_len: usize) -> Vec<Hypothesis> {
    let beam_width = beam_width.max(1);
    let mut finished = Vec::new();
    if max_len == 0 {
        return finished;
    }
    let mut live = vec![(
        Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
        },
        model.initial(),
    )];
    for step in 0..max_len {
        let mut candidates: Vec<(Hypothesis, usize)> = Vec::new();
        let mut states = Vec::with_capacity(live.len());
        for (li, (hyp, state)) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let (next_state, lp) = model.step(state, prev);
            states.push(next_state);
            for (t, p) in top_tokens(&lp, beam_width) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(t);
                candidates.push((
                    Hypothesis {
                        tokens,
                        log_prob: hyp.log_prob + p,
                    },
                    li,
                ));
            }
        }
        candidates.sort_by(|a, b| by_log_prob(&a.0, &b.0));
        candidates.truncate(beam_width);
        let last = step + 1 == max_len;
        let mut next = Vec::new();
        for (hyp, li) in candidates {
            if hyp.finished() || last {
                finished.push(hyp);
            } else {
                next.push((hyp, states[li].clone()));
            }
        }
        if next.is_empty() {
            break;
        }
        live = next;
    }
    finished
}

/// Best hypothesis by length-normalized log-probability; ties go to the
/// higher raw log-probability, then the smaller token sequence.
pub fn select_best(hyps: &[Hypothesis]) -> Option<&Hypothesis> {
    hyps.iter().min_by(|a, b| {
        b.score()
            .total_cmp(&a.score())
            .then_with(|| b.log_prob.total_cmp(&a.log_prob))
            .then_with(|| a.tokens.cmp(&b.tokens))
    })
}

/// Decoded tokens with BOS/EOS stripped; empty when nothing was generated.
pub fn beam_search<M: StepModel>(model: &M, beam_width: usize, max_len: usize) -> Vec<TokenId> {
    let hyps = beam_search_all(model, beam_width, max_len);
    select_best(&hyps).map(|h| h.content().to_vec()).unwrap_or_default()
}

/// Argmax decoding until EOS or `max_len` steps.
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Hypothesis {
    let mut state = model.initial();
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    };
    for _ in 0..max_len {
        let prev = hyp.tokens.last().copied().unwrap_or(BOS);
        let (next, lp) = model.step(&state, prev);
        let (t, p) = top_tokens(&lp, 1)[0];
        hyp.tokens.push(t);
        hyp.log_prob += p;
        state = next;
        if t == EOS {
            break;
        }
    }
    hyp
}

/// All sequences the decoder can produce within `max_len` steps, scored:
/// every EOS-terminated sequence and every unterminated one of full length.
pub fn enumerate_all<M: StepModel>(model: &M, vocab_size: usize, max_len: usize) -> Vec<Hypothesis> {
    fn walk<M: StepModel>(
        model: &M,
        state: &M::State,
        prefix: &mut Vec<TokenId>,
        lp: f64,
        vocab_size: usize,
        max_len: usize,
        out: &mut Vec<Hypothesis>,
    ) {
        let prev = prefix.last().copied().unwrap_or(BOS);
        let (next, dist) = model.step(state, prev);
        for t in 0..vocab_size as TokenId {
            if is_masked(t) {
                continue;
            }
            prefix.push(t);
            let total = lp + dist[t as usize];
            if t == EOS || prefix.len() == max_len {
                out.push(Hypothesis {
                    tokens: prefix.clone(),
                    log_prob: total,
                });
            } else {
                walk(model, &next, prefix, total, vocab_size, max_len, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if max_len > 0 {
        walk(model, &model.initial(), &mut Vec::new(), 0.0, vocab_size, max_len, &mut out);
    }
    out
}
