use std::collections::BTreeSet;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::text::tokenize;
use crate::corpus::{Corpus, Post};
use crate::qboost::BoostedQuestion;
use crate::retrieval::RetrievalIndex;

/// Produces the boosted form of a question.
pub trait QueryBooster: Sync {
    fn boost(&self, post: &Post) -> BoostedQuestion;
}

impl<F: Fn(&Post) -> BoostedQuestion + Sync> QueryBooster for F {
    fn boost(&self, post: &Post) -> BoostedQuestion {
        self(post)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub aid: u64,
    pub qid: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub qid: u64,
    pub boosted: BoostedQuestion,
    pub candidates: Vec<Candidate>,
    /// Position of the question's accepted answer in `candidates`.
    pub accepted: usize,
}

impl CandidatePool {
    pub fn accepted_aid(&self) -> u64 {
        self.candidates[self.accepted].aid
    }
}

/// Posts in similarity order with `post` itself first, widening the search
/// until `want` representative answers are found or the index is exhausted.
fn gather(corpus: &Corpus, index: &RetrievalIndex, post: &Post, k: usize) -> Vec<Candidate> {
    let title = tokenize(&post.title);
    let mut fetch = (2 * k).max(8).min(index.len());
    loop {
        let mut out: Vec<Candidate> = Vec::with_capacity(k);
        let mut seen = BTreeSet::new();
        let ranked = index.knn(&title, fetch);
        let order = std::iter::once(post.id).chain(ranked.iter().map(|(id, _)| *id).filter(|&id| id != post.id));
        for pid in order {
            if out.len() == k {
                break;
            }
            let Some(a) = corpus.post(pid).and_then(|p| corpus.representative_answer(p)) else {
                continue;
            };
            if seen.insert(a.id) {
                out.push(Candidate { aid: a.id, qid: pid });
            }
        }
        if out.len() == k || fetch >= index.len() {
            return out;
        }
        fetch = (fetch * 2).min(index.len());
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolReport {
    pub built: usize,
    pub short_pools: usize,
    pub skipped_no_accepted: usize,
}

/// One pool per question with an accepted answer: that answer, then one
/// representative answer from each next most similar post, up to `k`.
pub fn build_pools<B: QueryBooster + ?Sized>(
    questions: &[&Post],
    corpus: &Corpus,
    index: &RetrievalIndex,
    booster: &B,
    k: usize,
) -> (Vec<CandidatePool>, PoolReport) {
    let built: Vec<Option<CandidatePool>> = questions
        .par_iter()
        .map(|post| -> Option<CandidatePool> {
            let accepted = corpus.accepted_answer(post)?;
            let candidates = gather(corpus, index, post, k);
            let pos = candidates.iter().position(|c| c.aid == accepted.id)?;
            Some(CandidatePool {
                qid: post.id,
                boosted: booster.boost(post),
                candidates,
                accepted: pos,
            })
        })
        .collect();
    let mut report = PoolReport::default();
    let pools: Vec<CandidatePool> = built
        .into_iter()
        .filter_map(|p| {
            if p.is_none() {
                report.skipped_no_accepted += 1;
            }
            p
        })
        .collect();
    report.built = pools.len();
    report.short_pools = pools.iter().filter(|p| p.candidates.len() < k).count();
    if report.short_pools > 0 {
        warn!("{} candidate pools hold fewer than {k} answers", report.short_pools);
    }
    (pools, report)
}
